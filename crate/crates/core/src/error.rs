use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular configuration: {0}")]
    SingularConfiguration(String),

    #[error("integration failed at t = {time} us: {reason}")]
    IntegrationFailure { time: f64, reason: String },

    #[error("fit failed: {reason} (rms residual {residual:.3e})")]
    FitFailure { reason: String, residual: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

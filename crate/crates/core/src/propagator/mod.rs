//! Time evolution under the drive Hamiltonians: the adaptive integrator, gate
//! phase extraction, dense population traces and Rabi simulations.

mod exponential;
mod gate;
mod generator;
mod rabi;
mod taylor;
mod trace;

pub use exponential::{piecewise_exponential, ExponentialScheme};
pub use gate::{gate_map, gate_phases, wrap_2pi, wrap_pi, GateMap, GatePhases};
pub use rabi::{rabi_simulation, RabiMode, RabiOptions, RabiResult};
pub use trace::{population_trace, population_trace_span, write_trace_csv, EvolutionTrace};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{DriveConfig, ModelKind, QuantumState};

use generator::Generator;

/// Accuracy and model options for a single evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionControl {
    /// Per-step local error bound relative to the state norm.
    pub tolerance: f64,
    /// Taylor order of the integrator.
    pub order: usize,
    /// Smallest admissible step in μs before the run is declared failed.
    pub min_step: f64,
    pub max_steps: usize,
    pub model: ModelKind,
    /// Non-Hermitian decay rates of |p⟩ and |r⟩ in MHz (zero: Hermitian).
    pub gamma_p: f64,
    pub gamma_r: f64,
    /// Which trap's scale factors a single-atom evolution uses (0 or 1).
    pub trap: usize,
}

impl Default for EvolutionControl {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            order: 40,
            min_step: 1e-12,
            max_steps: 100_000_000,
            model: ModelKind::Full,
            gamma_p: 0.0,
            gamma_r: 0.0,
            trap: 0,
        }
    }
}

impl EvolutionControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::invalid(format!("tolerance must lie in (0, 1), got {}", self.tolerance)));
        }
        if !(4..=80).contains(&self.order) {
            return Err(Error::invalid(format!("Taylor order must lie in [4, 80], got {}", self.order)));
        }
        if !(self.min_step > 0.0) {
            return Err(Error::invalid("minimum step must be positive"));
        }
        if !(self.gamma_p.is_finite() && self.gamma_r.is_finite() && self.gamma_p >= 0.0 && self.gamma_r >= 0.0) {
            return Err(Error::invalid("decay rates must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn with_model(mut self, model: ModelKind) -> Self {
        self.model = model;
        self
    }
}

/// Solves `i·dψ/dt = H(t)ψ` from `t_span.0` to `t_span.1`. The state dimension
/// selects the model: 4 for one atom, 15 or 16 for a pair (matching the
/// blockade setting).
pub fn evolve(
    cfg: &DriveConfig,
    initial: &QuantumState,
    t_span: (f64, f64),
    control: &EvolutionControl,
) -> Result<QuantumState> {
    Ok(evolve_sampled(cfg, initial, t_span, &[], control)?.0)
}

/// Like [`evolve`], additionally returning the state at each of the sorted
/// `samples` times (dense output, no extra steps).
pub fn evolve_sampled(
    cfg: &DriveConfig,
    initial: &QuantumState,
    t_span: (f64, f64),
    samples: &[f64],
    control: &EvolutionControl,
) -> Result<(QuantumState, Vec<QuantumState>)> {
    cfg.validate()?;
    control.validate()?;
    check_span(cfg, t_span)?;
    if !initial.is_normalized(1e-9) {
        return Err(Error::invalid(format!("initial state norm² is {}, expected 1", initial.norm_sqr())));
    }
    if samples.windows(2).any(|w| w[1] < w[0]) || samples.iter().any(|s| !(t_span.0..=t_span.1).contains(s)) {
        return Err(Error::invalid("sample times must be sorted and inside the time span"));
    }
    let gen = Generator::new(cfg, initial.dim(), control, &support_of(initial))?;
    let psi0 = gen.restrict(initial.amplitudes.as_slice());
    let mut out = Vec::with_capacity(samples.len());
    let (psi, _) = taylor::integrate(&gen, &psi0, t_span, control, samples, |_, v| {
        out.push(QuantumState::new(DVector::from_vec(gen.expand(v))))
    })?;
    Ok((QuantumState::new(DVector::from_vec(gen.expand(&psi))), out))
}

pub(crate) fn check_span(cfg: &DriveConfig, (t0, t1): (f64, f64)) -> Result<()> {
    if !(t0.is_finite() && t1.is_finite() && t0 <= t1) {
        return Err(Error::invalid(format!("invalid time span ({t0}, {t1})")));
    }
    cfg.check_time(t0)?;
    cfg.check_time(t1)
}

pub(crate) fn support_of(state: &QuantumState) -> Vec<usize> {
    let zero = num_complex::Complex64::new(0.0, 0.0);
    state.amplitudes.iter().enumerate().filter(|(_, a)| **a != zero).map(|(i, _)| i).collect()
}

//! Command-line front end. All physical parameters come from the config
//! file; flags choose what to run and where to write.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiment::{run_table1, write_parity_csv, GateModel};
use crate::format::format_g9;
use crate::optimizer::{optimize_waveform_with, sweep_degree, OptimizationResult, LOG_HEADER};
use crate::propagator::{gate_phases, population_trace, wrap_pi, write_trace_csv, GatePhases};
use crate::waveform::{parse_series_csv, rf_deviation, sample_envelope, to_mode, write_waveform_csv, DeviationMode};

#[derive(Debug, Parser)]
#[command(name = "rydberg-gate", version, about = "Single-pulse Rydberg blockade CZ gate: simulate, optimize, benchmark")]
pub struct Cli {
    /// Run configuration (TOML). Built-in paper defaults when omitted.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output_dir` from the config.
    #[arg(short, long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the 780 nm envelope to CSV.
    Waveform(WaveformArgs),
    /// Gate phases, population traces and waveform optimization.
    Gate(GateArgs),
    /// Simulated Bell-state experiment with measurement noise.
    Bell(BellArgs),
    /// Print the effective configuration in canonical form.
    Config,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Amplitude,
    Intensity,
}

impl From<ModeArg> for DeviationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Amplitude => DeviationMode::Amplitude,
            ModeArg::Intensity => DeviationMode::Intensity,
        }
    }
}

#[derive(Debug, Args)]
pub struct WaveformArgs {
    /// Samples per μs.
    #[arg(long, default_value_t = 500.0)]
    pub rate: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Amplitude)]
    pub mode: ModeArg,
    /// Output file (default: waveform.csv in the output directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Measured two-column series to compare against the ideal waveform.
    #[arg(long)]
    pub compare: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("action").required(true).args(["phases", "trace", "optimize", "sweep_n"])))]
pub struct GateArgs {
    /// Print and save the gate phases.
    #[arg(long)]
    pub phases: bool,
    /// Write the population/phase trace starting from `--label`.
    #[arg(long)]
    pub trace: bool,
    /// Optimize β1..β4 and δ starting from the config values.
    #[arg(long)]
    pub optimize: bool,
    /// Optimize at each Bernstein degree in an inclusive range, e.g. 8..12.
    #[arg(long, value_name = "A..B", value_parser = parse_range)]
    pub sweep_n: Option<(usize, usize)>,
    /// Initial basis state of the trace.
    #[arg(long, default_value = "11", requires = "trace")]
    pub label: String,
}

#[derive(Debug, Args)]
pub struct BellArgs {
    /// Number of parity-scan phases.
    #[arg(long)]
    pub parity_points: Option<usize>,
    /// Shots per measurement setting.
    #[arg(long)]
    pub shots: Option<u64>,
    /// Disable the push-out beam.
    #[arg(long)]
    pub no_pushout: bool,
    /// Replace the simulated pulse by diag(1, 1, 1, −1).
    #[arg(long)]
    pub ideal_cz: bool,
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected A..B, got '{s}'"))?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let a: usize = a.trim().parse().map_err(|_| format!("bad range start '{a}'"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad range end '{b}'"))?;
    if a > b {
        return Err(format!("empty range {a}..{b}"));
    }
    Ok((a, b))
}

/// Parses arguments, runs the command and maps the outcome to an exit code:
/// 0 on success, 1 on runtime or numerical failure, 2 on usage or config
/// errors.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let words: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, &words) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

/// Runs a parsed command line; `args` is recorded in the manifest.
pub fn run(cli: &Cli, args: &[String]) -> Result<()> {
    let (cfg, source) = match &cli.config {
        Some(p) => (RunConfig::load(p)?, p.display().to_string()),
        None => (RunConfig::default(), "built-in defaults".to_string()),
    };
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let mut run = Run { cfg, source, out_dir, produced: Vec::new() };
    let name = match &cli.command {
        Command::Waveform(a) => {
            run.waveform(a)?;
            "waveform"
        }
        Command::Gate(a) => {
            run.gate(a)?;
            "gate"
        }
        Command::Bell(a) => {
            run.bell(a)?;
            "bell"
        }
        Command::Config => {
            print!("{}", run.cfg.to_toml());
            return Ok(());
        }
    };
    run.write_manifest(name, args)
}

struct Run {
    cfg: RunConfig,
    source: String,
    out_dir: PathBuf,
    produced: Vec<PathBuf>,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Writes `contents` to `path` through a temporary sibling and a rename.
    fn write(&mut self, path: PathBuf, contents: &[u8]) -> Result<()> {
        write_atomic(&path, contents)?;
        info!("wrote {}", path.display());
        self.produced.push(path);
        Ok(())
    }

    fn waveform(&mut self, a: &WaveformArgs) -> Result<()> {
        let spec = self.cfg.waveform.clone();
        let mode = DeviationMode::from(a.mode);
        let samples = sample_envelope(&spec, a.rate)?;
        let mut buf = Vec::new();
        write_waveform_csv(&mut buf, &to_mode(&samples, mode), mode)?;
        let out = a.out.clone().unwrap_or_else(|| self.path("waveform.csv"));
        self.write(out, &buf)?;
        println!("samples = {}", samples.len());
        println!("peak_MHz = {}", format_g9(spec.peak()));
        if let Some(p) = &a.compare {
            let text = fs::read_to_string(p)?;
            let measured = parse_series_csv(&text)?;
            println!("deviation = {}", format_g9(rf_deviation(&measured, &spec, mode)?));
        }
        Ok(())
    }

    fn gate(&mut self, a: &GateArgs) -> Result<()> {
        let control = self.cfg.evolution_control();
        if a.phases {
            let g = gate_phases(&self.cfg.drive_config(), &control)?;
            let report = phases_report(&g);
            print!("{report}");
            self.write(self.path("gate_phases.txt"), report.as_bytes())
        } else if a.trace {
            let trace = population_trace(&self.cfg.drive_config(), &a.label, self.cfg.propagator.trace_points, &control)?;
            let mut buf = Vec::new();
            write_trace_csv(&mut buf, &trace, &[])?;
            self.write(self.path(&format!("trace_{}.csv", a.label)), &buf)
        } else if a.optimize {
            self.optimize()
        } else if let Some((lo, hi)) = a.sweep_n {
            self.sweep(lo, hi)
        } else {
            unreachable!("clap enforces one action")
        }
    }

    fn optimize(&mut self) -> Result<()> {
        let problem = self.cfg.optimization_problem()?;
        let opts = self.cfg.optimize_options();
        let initial = problem.initial_params();

        // The log grows row by row in a temporary file and is renamed into
        // place once the search ends.
        fs::create_dir_all(&self.out_dir)?;
        let log_path = self.path("optimization_log.csv");
        let partial = temp_sibling(&log_path);
        let mut log = BufWriter::new(File::create(&partial)?);
        writeln!(log, "{LOG_HEADER}")?;
        let mut io_error = None;
        let result = optimize_waveform_with(&problem, &initial, &opts, |e| {
            if io_error.is_none() {
                if let Err(err) = writeln!(log, "{}", e.csv_row()).and_then(|_| log.flush()) {
                    io_error = Some(err);
                }
            }
            if e.iteration % 10 == 0 {
                info!("iteration {} cost {:.3e}", e.iteration, e.cost);
            }
        });
        drop(log);
        let result = match (result, io_error) {
            (Ok(r), None) => r,
            (Err(e), _) => {
                let _ = fs::remove_file(&partial);
                return Err(e);
            }
            (_, Some(e)) => {
                let _ = fs::remove_file(&partial);
                return Err(e.into());
            }
        };
        fs::rename(&partial, &log_path)?;
        self.produced.push(log_path);

        let report = optimization_report(&result);
        print!("{report}");
        self.write(self.path("optimization.txt"), report.as_bytes())?;
        let tuned = self.cfg.with_gate_params(&result.params);
        self.write(self.path("optimized_config.toml"), tuned.to_toml().as_bytes())?;
        if !result.converged {
            log::warn!("optimizer stopped ({:?}) with cost {:.3e} above the tolerance", result.termination, result.cost);
        }
        Ok(())
    }

    fn sweep(&mut self, lo: usize, hi: usize) -> Result<()> {
        let problem = self.cfg.optimization_problem()?;
        let degrees: Vec<usize> = (lo..=hi).collect();
        let rows = sweep_degree(&problem, &degrees, &problem.initial_params(), &self.cfg.optimize_options())?;
        let mut s = String::from(
            "degree,cost,converged,p_return_01,p_return_11,phi_01,phi_11,condition,peak_780_MHz,beta1,beta2,beta3,beta4,delta_MHz\n",
        );
        for r in &rows {
            let g = &r.result.phases;
            let mut cells = vec![r.degree.to_string(), format_g9(r.result.cost), r.result.converged.to_string()];
            cells.extend([g.p_return_01, g.p_return_11, g.phi_01, g.phi_11, g.condition, r.peak_780].map(format_g9));
            cells.extend(r.result.params.iter().map(|p| format_g9(*p)));
            let _ = writeln!(s, "{}", cells.join(","));
        }
        print!("{s}");
        self.write(self.path("degree_sweep.csv"), s.as_bytes())
    }

    fn bell(&mut self, a: &BellArgs) -> Result<()> {
        let mut noise = self.cfg.noise_model();
        if let Some(n) = a.shots {
            noise.shots = n;
        }
        let mut opts = self.cfg.experiment_options();
        if let Some(k) = a.parity_points {
            opts.parity_points = k;
        }
        if a.no_pushout {
            opts.pushout = false;
        }
        let gate = if a.ideal_cz { GateModel::IdealCz } else { GateModel::Simulated(self.cfg.drive_config()) };
        let result = run_table1(&gate, &noise, &opts)?;
        let report = result.report();
        print!("{report}");
        self.write(self.path("bell_report.txt"), report.as_bytes())?;
        let mut buf = Vec::new();
        write_parity_csv(&mut buf, &result.parity_points)?;
        self.write(self.path("parity_scan.csv"), &buf)
    }

    fn write_manifest(&mut self, command: &str, args: &[String]) -> Result<()> {
        let config_path = self.path("effective_config.toml");
        self.write(config_path, self.cfg.to_toml().as_bytes())?;
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", toml_str(command));
        let _ = writeln!(s, "arguments = [{}]", args.iter().map(|a| toml_str(a)).collect::<Vec<_>>().join(", "));
        let _ = writeln!(s, "version = {}", toml_str(env!("CARGO_PKG_VERSION")));
        let _ = writeln!(s, "config = {}", toml_str(&self.source));
        let _ = writeln!(s, "seed = {}", self.cfg.seed);
        let files: Vec<String> = self.produced.iter().map(|p| toml_str(&p.display().to_string())).collect();
        let _ = writeln!(s, "files = [{}]", files.join(", "));
        let path = self.path("manifest.toml");
        write_atomic(&path, s.as_bytes())
    }
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = temp_sibling(path);
    let res = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(res?)
}

/// Key-value block of the gate phases.
pub fn phases_report(g: &GatePhases) -> String {
    let mut s = String::new();
    for (k, v) in [
        ("phi_00", g.phi_00),
        ("phi_01", g.phi_01),
        ("phi_10", g.phi_10),
        ("phi_11", g.phi_11),
        ("p_return_01", g.p_return_01),
        ("p_return_10", g.p_return_10),
        ("p_return_11", g.p_return_11),
        ("condition", g.condition),
        ("condition_over_pi", g.condition / std::f64::consts::PI),
        ("condition_offset_from_minus_pi", wrap_pi(g.condition + std::f64::consts::PI)),
    ] {
        let _ = writeln!(s, "{k} = {}", format_g9(v));
    }
    s
}

pub fn optimization_report(r: &OptimizationResult) -> String {
    let mut s = String::new();
    for (k, v) in ["beta1", "beta2", "beta3", "beta4", "delta_MHz"].iter().zip(r.params) {
        let _ = writeln!(s, "{k} = {}", format_g9(v));
    }
    let _ = writeln!(s, "cost = {}", format_g9(r.cost));
    let _ = writeln!(s, "converged = {}", r.converged);
    let _ = writeln!(s, "termination = {:?}", r.termination);
    let _ = writeln!(s, "iterations = {}", r.iterations);
    let _ = writeln!(s, "evaluations = {}", r.evaluations);
    s + &phases_report(&r.phases)
}

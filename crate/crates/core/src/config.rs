//! The run configuration file.
//!
//! A TOML document with one section per module. Every key is optional and
//! falls back to the paper's parameter set; unknown keys are rejected. The
//! canonical form is what [`RunConfig::to_toml`] emits: all keys, in the
//! order of the structs below.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{BellSettings, ExperimentOptions, NoiseModel, CALIBRATED_INTENSITY_SIGMA};
use crate::model::{Blockade, Drive780, DriveConfig, ModelKind, TrapScale};
use crate::optimizer::{OptimizationProblem, OptimizeOptions, Params, TargetSign};
use crate::propagator::EvolutionControl;
use crate::waveform::WaveformSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds every random choice: optimizer restarts and measurement shots.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub waveform: WaveformSpec,
    pub model: ModelSection,
    pub propagator: PropagatorSection,
    pub optimizer: OptimizerSection,
    pub noise: NoiseSection,
    pub experiment: ExperimentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 20220101,
            output_dir: PathBuf::from("out"),
            waveform: WaveformSpec::default(),
            model: ModelSection::default(),
            propagator: PropagatorSection::default(),
            optimizer: OptimizerSection::default(),
            noise: NoiseSection::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub omega_480: f64,
    pub delta_int: f64,
    pub delta_2ph: f64,
    pub blockade: Blockade,
    pub dark_shift: f64,
    pub trap_1: TrapScale,
    pub trap_2: TrapScale,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = DriveConfig::default();
        Self {
            omega_480: d.omega_480,
            delta_int: d.delta_int,
            delta_2ph: d.delta_2ph,
            blockade: d.blockade,
            dark_shift: d.dark_shift,
            trap_1: d.traps[0],
            trap_2: d.traps[1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Full,
    Effective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagatorSection {
    pub model: ModelChoice,
    pub tolerance: f64,
    pub order: usize,
    pub gamma_p: f64,
    pub gamma_r: f64,
    /// Samples of a population trace over the gate window.
    pub trace_points: usize,
}

impl Default for PropagatorSection {
    fn default() -> Self {
        let c = EvolutionControl::default();
        Self {
            model: ModelChoice::Full,
            tolerance: c.tolerance,
            order: c.order,
            gamma_p: c.gamma_p,
            gamma_r: c.gamma_r,
            trace_points: 401,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetChoice {
    Plus,
    Minus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub restarts: usize,
    pub initial_step: f64,
    pub w_pop: f64,
    pub w_phase: f64,
    pub target: TargetChoice,
    /// Bounds on (β1, β2, β3, β4, δ), MHz.
    pub lower: Params,
    pub upper: Params,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimizeOptions::default();
        Self {
            max_iterations: o.max_iterations,
            tolerance: o.tolerance,
            restarts: o.restarts,
            initial_step: o.initial_step,
            w_pop: 1.0,
            w_phase: 1.0 / (PI * PI),
            target: TargetChoice::Minus,
            lower: [0.0, 0.0, 0.0, 0.0, -10.0],
            upper: [800.0, 800.0, 800.0, 800.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub rabi_decay_tau: f64,
    pub intensity_sigma: f64,
    pub rydberg_detection_eff: f64,
    pub state_prep_eff: f64,
    pub atom_retention: f64,
    pub spam_error: f64,
    pub shots: u64,
    pub quadrature_nodes: usize,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = NoiseModel::default();
        debug_assert_eq!(n.intensity_sigma, CALIBRATED_INTENSITY_SIGMA);
        Self {
            rabi_decay_tau: n.rabi_decay_tau,
            intensity_sigma: n.intensity_sigma,
            rydberg_detection_eff: n.rydberg_detection_eff,
            state_prep_eff: n.state_prep_eff,
            atom_retention: n.atom_retention,
            spam_error: n.spam_error,
            shots: n.shots,
            quadrature_nodes: n.quadrature_nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub parity_points: usize,
    pub pushout: bool,
    /// Phase of the final 3π/4 pulse in rad; scanned when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compensation_phase: Option<f64>,
    pub compensation_scan_points: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let o = ExperimentOptions::default();
        Self {
            parity_points: o.parity_points,
            pushout: o.pushout,
            compensation_phase: o.bell.compensation_phase,
            compensation_scan_points: o.bell.scan_points,
        }
    }
}

impl RunConfig {
    /// Parses and validates a configuration document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The canonical form of this configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    /// Re-checks every module invariant. Failures are reported as config
    /// errors.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::InvalidArgument(m) | Error::SingularConfiguration(m) => Error::Config(m),
            other => other,
        };
        self.drive_config().validate().map_err(as_config)?;
        self.evolution_control().validate().map_err(as_config)?;
        self.noise_model().validate().map_err(as_config)?;
        self.optimization_problem().map_err(as_config)?;
        self.optimize_options().validate().map_err(as_config)?;
        if self.propagator.trace_points < 2 {
            return Err(Error::Config("propagator.trace_points must be at least 2".into()));
        }
        if self.experiment.parity_points < 8 {
            return Err(Error::Config("experiment.parity_points must be at least 8".into()));
        }
        if self.experiment.compensation_scan_points < 3 {
            return Err(Error::Config("experiment.compensation_scan_points must be at least 3".into()));
        }
        if let Some(p) = self.experiment.compensation_phase {
            if !p.is_finite() {
                return Err(Error::Config("experiment.compensation_phase must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn drive_config(&self) -> DriveConfig {
        let m = &self.model;
        DriveConfig {
            drive: Drive780::Modulated(self.waveform.clone()),
            omega_480: m.omega_480,
            delta_int: m.delta_int,
            delta_2ph: m.delta_2ph,
            blockade: m.blockade,
            traps: [m.trap_1, m.trap_2],
            dark_shift: m.dark_shift,
            intensity_factor: 1.0,
        }
    }

    pub fn evolution_control(&self) -> EvolutionControl {
        let p = &self.propagator;
        EvolutionControl {
            tolerance: p.tolerance,
            order: p.order,
            model: match p.model {
                ModelChoice::Full => ModelKind::Full,
                ModelChoice::Effective => ModelKind::Effective,
            },
            gamma_p: p.gamma_p,
            gamma_r: p.gamma_r,
            ..EvolutionControl::default()
        }
    }

    pub fn noise_model(&self) -> NoiseModel {
        let n = &self.noise;
        NoiseModel {
            rabi_decay_tau: n.rabi_decay_tau,
            intensity_sigma: n.intensity_sigma,
            rydberg_detection_eff: n.rydberg_detection_eff,
            state_prep_eff: n.state_prep_eff,
            atom_retention: n.atom_retention,
            spam_error: n.spam_error,
            shots: n.shots,
            seed: self.seed,
            quadrature_nodes: n.quadrature_nodes,
        }
    }

    pub fn optimization_problem(&self) -> Result<OptimizationProblem> {
        let o = &self.optimizer;
        let problem = OptimizationProblem {
            base: self.drive_config(),
            lower: o.lower,
            upper: o.upper,
            w_pop: o.w_pop,
            w_phase: o.w_phase,
            target: match o.target {
                TargetChoice::Plus => TargetSign::Plus,
                TargetChoice::Minus => TargetSign::Minus,
            },
            control: self.evolution_control(),
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn optimize_options(&self) -> OptimizeOptions {
        let o = &self.optimizer;
        OptimizeOptions {
            max_iterations: o.max_iterations,
            tolerance: o.tolerance,
            seed: self.seed,
            restarts: o.restarts,
            initial_step: o.initial_step,
        }
    }

    pub fn experiment_options(&self) -> ExperimentOptions {
        let e = &self.experiment;
        ExperimentOptions {
            parity_points: e.parity_points,
            pushout: e.pushout,
            bell: BellSettings { compensation_phase: e.compensation_phase, scan_points: e.compensation_scan_points },
            control: self.evolution_control(),
        }
    }

    /// Copy with the free gate parameters (β1..β4, δ) replaced.
    pub fn with_gate_params(&self, p: &Params) -> Self {
        let mut c = self.clone();
        c.waveform.beta = [p[0], p[1], p[2], p[3]];
        c.model.delta_2ph = p[4];
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.drive_config(), DriveConfig::default());
        assert_eq!(cfg.noise_model(), NoiseModel::default());
    }

    #[test]
    fn canonical_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.model.blockade = Blockade::Finite(1.0e4);
        cfg.experiment.compensation_phase = Some(1.25);
        cfg.waveform.beta[2] = 1.0 / 3.0;
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml("[model]\nomega_481 = 50.0\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("omega_481"), "{err}");
    }

    #[test]
    fn invariants_are_rechecked() {
        for doc in [
            "[waveform]\ndegree = 7\n",
            "[model]\ntrap_1 = { s780 = 1.2, s480 = 1.0 }\n",
            "[noise]\nspam_error = 0.7\n",
            "[optimizer]\nlower = [0, 0, 0, 0, 20]\n",
            "[model]\nblockade = -3.0\n",
        ] {
            let err = RunConfig::from_toml(doc).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{doc}: {err}");
        }
    }

    #[test]
    fn integer_literals_accepted_for_reals() {
        let cfg = RunConfig::from_toml("[waveform]\ngate_time = 2\nbeta = [200, 90, 300, 196]\ndegree = 9\n").unwrap();
        assert_eq!(cfg.waveform.gate_time, 2.0);
    }
}

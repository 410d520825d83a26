use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{fit_damped_sinusoid, DampedSinusoid};
use crate::model::{Blockade, Drive780, DriveConfig, Level, PairLabel, QuantumState, PAIR_DIM, PROJECTED_DIM};
use crate::quadrature::gauss_hermite;

use super::trace::EvolutionTrace;
use super::{evolve_sampled, EvolutionControl};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RabiMode {
    /// One atom from |1⟩; the observable is P(|1⟩).
    Single,
    /// Two blockaded atoms from |11⟩; the observable is P(|11⟩).
    Pair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RabiOptions {
    pub mode: RabiMode,
    /// Length of the drive in μs.
    pub duration: f64,
    pub n_points: usize,
    /// Relative rms of a quasi-static common factor on Ω_780 (zero: none).
    pub intensity_sigma: f64,
    /// Gauss–Hermite nodes used to average over the intensity factor.
    pub quadrature_nodes: usize,
    /// Model, decay rates and accuracy.
    pub control: EvolutionControl,
}

impl Default for RabiOptions {
    fn default() -> Self {
        Self {
            mode: RabiMode::Single,
            duration: 10.0,
            n_points: 401,
            intensity_sigma: 0.0,
            quadrature_nodes: 24,
            control: EvolutionControl::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RabiResult {
    /// Ensemble-averaged populations (no phases).
    pub trace: EvolutionTrace,
    pub observable_label: String,
    pub observable: Vec<f64>,
    pub fit: DampedSinusoid,
}

impl RabiResult {
    pub fn frequency(&self) -> f64 {
        self.fit.frequency
    }

    pub fn decay_time(&self) -> f64 {
        self.fit.decay_time()
    }
}

/// Simulates a constant-amplitude drive and fits the oscillation of the
/// initial-state population. Intensity noise is averaged exactly over its
/// distribution by quadrature rather than by sampling shots.
pub fn rabi_simulation(cfg: &DriveConfig, opts: &RabiOptions) -> Result<RabiResult> {
    if !matches!(cfg.drive, Drive780::Constant(_)) {
        return Err(Error::invalid("Rabi simulation needs a constant Ω_780 drive"));
    }
    if !(opts.duration > 0.0 && opts.duration.is_finite()) {
        return Err(Error::invalid(format!("duration must be positive, got {}", opts.duration)));
    }
    if !(opts.intensity_sigma >= 0.0 && opts.intensity_sigma < 1.0) {
        return Err(Error::invalid("intensity sigma must lie in [0, 1)"));
    }
    if opts.n_points < 6 {
        return Err(Error::invalid("need at least 6 points to fit an oscillation"));
    }
    let (initial, label) = match opts.mode {
        RabiMode::Single => (QuantumState::single(Level::One), "1".to_string()),
        RabiMode::Pair => {
            let dim = match cfg.blockade {
                Blockade::Infinite => PROJECTED_DIM,
                Blockade::Finite(_) => PAIR_DIM,
            };
            let l = PairLabel(Level::One, Level::One);
            (QuantumState::pair(l, dim)?, l.to_string())
        }
    };
    let n = opts.n_points;
    let times: Vec<f64> = (0..n).map(|i| opts.duration * i as f64 / (n - 1) as f64).collect();

    let (nodes, weights) = if opts.intensity_sigma > 0.0 {
        gauss_hermite(opts.quadrature_nodes)?
    } else {
        (vec![0.0], vec![1.0])
    };
    let runs = nodes
        .par_iter()
        .map(|x| {
            let mut c = cfg.clone();
            c.intensity_factor = cfg.intensity_factor * (1.0 + opts.intensity_sigma * x).max(0.0);
            let (_, states) = evolve_sampled(&c, &initial, (0.0, opts.duration), &times, &opts.control)?;
            EvolutionTrace::from_states(times.clone(), &states, &[])
        })
        .collect::<Result<Vec<_>>>()?;

    let mut trace = runs[0].clone();
    for row in &mut trace.populations {
        row.iter_mut().for_each(|p| *p = 0.0);
    }
    for (run, w) in runs.iter().zip(&weights) {
        for (acc, pops) in trace.populations.iter_mut().zip(&run.populations) {
            for (a, p) in acc.iter_mut().zip(pops) {
                *a += w * p;
            }
        }
    }
    let observable = trace.population(&label).expect("initial label present").to_vec();
    let fit = fit_damped_sinusoid(&times, &observable)?;
    Ok(RabiResult { trace, observable_label: label, observable, fit })
}

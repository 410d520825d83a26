use std::f64::consts::{FRAC_PI_2, TAU};
use std::io::Write;

use crate::error::{Error, Result};
use crate::format::format_g9;
use crate::model::{labels_for_dim, Blockade, DriveConfig, Level, PairLabel, QuantumState, PAIR_DIM, PROJECTED_DIM};

use super::{evolve_sampled, EvolutionControl};

/// Amplitude below which a phase jump between samples is not checked.
const PHASE_CHECK_AMPLITUDE: f64 = 1e-3;

/// Populations (and selected phases) sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionTrace {
    pub times: Vec<f64>,
    pub labels: Vec<String>,
    /// `populations[k][i]` is the population of `labels[k]` at `times[i]`.
    pub populations: Vec<Vec<f64>>,
    pub phase_labels: Vec<String>,
    /// Unwrapped phases, indexed like `populations`.
    pub phases: Vec<Vec<f64>>,
}

impl EvolutionTrace {
    pub fn population(&self, label: &str) -> Option<&[f64]> {
        let k = self.labels.iter().position(|l| l == label)?;
        Some(&self.populations[k])
    }

    pub fn phase(&self, label: &str) -> Option<&[f64]> {
        let k = self.phase_labels.iter().position(|l| l == label)?;
        Some(&self.phases[k])
    }

    /// Total population at sample i.
    pub fn norm_at(&self, i: usize) -> f64 {
        self.populations.iter().map(|p| p[i]).sum()
    }

    pub(crate) fn from_states(
        times: Vec<f64>,
        states: &[QuantumState],
        phase_labels: &[String],
    ) -> Result<Self> {
        let dim = states.first().map_or(0, QuantumState::dim);
        let labels = labels_for_dim(dim)?;
        let populations = (0..dim).map(|k| states.iter().map(|s| s.amplitudes[k].norm_sqr()).collect()).collect();
        let mut phases = Vec::with_capacity(phase_labels.len());
        for label in phase_labels {
            let k = labels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::invalid(format!("unknown label '{label}' for dimension {dim}")))?;
            let amps: Vec<_> = states.iter().map(|s| s.amplitudes[k]).collect();
            phases.push(unwrap_phase(&times, &amps, label)?);
        }
        Ok(Self { times, labels, populations, phase_labels: phase_labels.to_vec(), phases })
    }
}

/// Nearest-branch continuation. Where the amplitude is appreciable at both
/// ends of an interval, a jump of π/2 or more means the grid is too coarse.
fn unwrap_phase(times: &[f64], amps: &[num_complex::Complex64], label: &str) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = Vec::with_capacity(amps.len());
    for (i, a) in amps.iter().enumerate() {
        let raw = a.arg();
        let Some(&prev) = out.last() else {
            out.push(raw);
            continue;
        };
        let step = raw - prev;
        let delta = step - TAU * (step / TAU).round();
        if delta.abs() >= FRAC_PI_2
            && a.norm() > PHASE_CHECK_AMPLITUDE
            && amps[i - 1].norm() > PHASE_CHECK_AMPLITUDE
        {
            return Err(Error::invalid(format!(
                "phase of |{label}⟩ changes by {delta:.3} rad between t = {} and {} us; increase the number of points",
                times[i - 1], times[i]
            )));
        }
        out.push(prev + delta);
    }
    Ok(out)
}

fn initial_state(cfg: &DriveConfig, label: &str) -> Result<QuantumState> {
    if label.chars().count() == 1 {
        let level = Level::ALL
            .into_iter()
            .find(|l| l.symbol().to_string() == label)
            .ok_or_else(|| Error::invalid(format!("unknown level '{label}'")))?;
        return Ok(QuantumState::single(level));
    }
    let pair: PairLabel = label.parse()?;
    let dim = match cfg.blockade {
        Blockade::Infinite => PROJECTED_DIM,
        Blockade::Finite(_) => PAIR_DIM,
    };
    QuantumState::pair(pair, dim).map_err(|_| Error::invalid(format!("|{label}⟩ is not in the infinite-blockade basis")))
}

/// Samples the evolution from the basis state `initial` ("1", "r", "01", "11",
/// ...) at `n_points` uniform times over the whole waveform. The phase of the
/// initial label is tracked.
pub fn population_trace(
    cfg: &DriveConfig,
    initial: &str,
    n_points: usize,
    control: &EvolutionControl,
) -> Result<EvolutionTrace> {
    let end = cfg.time_limit();
    if !end.is_finite() {
        return Err(Error::invalid("a constant drive needs an explicit time span"));
    }
    population_trace_span(cfg, initial, (0.0, end), n_points, &[initial.to_string()], control)
}

/// General form of [`population_trace`] with explicit span and phase labels.
pub fn population_trace_span(
    cfg: &DriveConfig,
    initial: &str,
    t_span: (f64, f64),
    n_points: usize,
    phase_labels: &[String],
    control: &EvolutionControl,
) -> Result<EvolutionTrace> {
    if n_points < 2 {
        return Err(Error::invalid(format!("need at least 2 points, got {n_points}")));
    }
    let psi0 = initial_state(cfg, initial)?;
    let (t0, t1) = t_span;
    let times: Vec<f64> = (0..n_points)
        .map(|i| if i + 1 == n_points { t1 } else { t0 + (t1 - t0) * i as f64 / (n_points - 1) as f64 })
        .collect();
    let (_, states) = evolve_sampled(cfg, &psi0, t_span, &times, control)?;
    EvolutionTrace::from_states(times, &states, phase_labels)
}

/// Writes `t_us,<label>_pop...,<label>_phase...` for the requested labels
/// (all labels when empty). Phases are written for requested labels that
/// were tracked.
pub fn write_trace_csv<W: Write>(mut out: W, trace: &EvolutionTrace, labels: &[String]) -> Result<()> {
    let labels: Vec<&String> = if labels.is_empty() { trace.labels.iter().collect() } else { labels.iter().collect() };
    let mut pops = Vec::new();
    let mut phases = Vec::new();
    for l in &labels {
        pops.push(trace.population(l).ok_or_else(|| Error::invalid(format!("label '{l}' not in trace")))?);
        if let Some(p) = trace.phase(l) {
            phases.push((l, p));
        }
    }
    let mut header = vec!["t_us".to_string()];
    header.extend(labels.iter().map(|l| format!("{l}_pop")));
    header.extend(phases.iter().map(|(l, _)| format!("{l}_phase")));
    writeln!(out, "{}", header.join(","))?;
    for (i, t) in trace.times.iter().enumerate() {
        let mut row = vec![format_g9(*t)];
        row.extend(pops.iter().map(|p| format_g9(p[i])));
        row.extend(phases.iter().map(|(_, p)| format_g9(p[i])));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

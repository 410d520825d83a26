use std::f64::consts::{PI, TAU};

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Blockade, Drive780, DriveConfig, PairLabel, QuantumState, PAIR_DIM, PROJECTED_DIM};

use super::{evolve, EvolutionControl};

/// Wraps an angle into (−π, π].
pub fn wrap_pi(x: f64) -> f64 {
    let y = x - TAU * ((x + PI) / TAU).floor();
    if y <= -PI {
        y + TAU
    } else {
        y
    }
}

/// Wraps an angle into (−2π, 2π].
pub fn wrap_2pi(x: f64) -> f64 {
    let y = x - 2.0 * TAU * ((x + TAU) / (2.0 * TAU)).floor();
    if y <= -TAU {
        y + 2.0 * TAU
    } else {
        y
    }
}

/// Final states of the four computational inputs after one gate pulse.
#[derive(Debug, Clone)]
pub struct GateMap {
    /// Output for inputs 00, 01, 10, 11, in that order.
    pub columns: [QuantumState; 4],
    pub dim: usize,
}

impl GateMap {
    /// `⟨q|ψ_q(T_g)⟩` for each computational label q.
    pub fn diagonal(&self) -> [C64; 4] {
        let labels = PairLabel::computational();
        std::array::from_fn(|k| self.columns[k].amplitudes[labels[k].index()])
    }
}

/// Accumulated phases and return probabilities of the computational states.
#[derive(Debug, Clone, PartialEq)]
pub struct GatePhases {
    pub phi_00: f64,
    pub phi_01: f64,
    pub phi_10: f64,
    pub phi_11: f64,
    pub p_return_01: f64,
    pub p_return_10: f64,
    pub p_return_11: f64,
    /// `φ00 − φ01 − φ10 + φ11`, wrapped to (−2π, 2π].
    pub condition: f64,
    /// Raw return amplitudes for 00, 01, 10, 11.
    pub amplitudes: [C64; 4],
}

impl GatePhases {
    /// Builds the phase summary from raw return amplitudes. `φ00` is pinned to
    /// zero: |00⟩ is dark.
    pub fn from_amplitudes(amplitudes: [C64; 4]) -> Self {
        let phi_00 = 0.0;
        let phi_01 = wrap_pi(amplitudes[1].arg());
        let phi_10 = wrap_pi(amplitudes[2].arg());
        let phi_11 = wrap_pi(amplitudes[3].arg());
        let p = |a: C64| a.norm_sqr().clamp(0.0, 1.0);
        Self {
            phi_00,
            phi_01,
            phi_10,
            phi_11,
            p_return_01: p(amplitudes[1]),
            p_return_10: p(amplitudes[2]),
            p_return_11: p(amplitudes[3]),
            condition: wrap_2pi(phi_00 - phi_01 - phi_10 + phi_11),
            amplitudes,
        }
    }
}

/// Evolves each computational input over one gate pulse. The four runs are
/// independent and execute in parallel.
pub fn gate_map(cfg: &DriveConfig, control: &EvolutionControl) -> Result<GateMap> {
    let gate_time = match &cfg.drive {
        Drive780::Modulated(spec) => spec.gate_time,
        Drive780::Constant(_) => return Err(Error::invalid("gate evaluation needs a modulated waveform")),
    };
    let dim = match cfg.blockade {
        Blockade::Infinite => PROJECTED_DIM,
        Blockade::Finite(_) => PAIR_DIM,
    };
    let columns = PairLabel::computational()
        .par_iter()
        .map(|&label| evolve(cfg, &QuantumState::pair(label, dim)?, (0.0, gate_time), control))
        .collect::<Result<Vec<_>>>()?;
    let columns: [QuantumState; 4] = columns.try_into().expect("four computational inputs");
    Ok(GateMap { columns, dim })
}

pub fn gate_phases(cfg: &DriveConfig, control: &EvolutionControl) -> Result<GatePhases> {
    Ok(GatePhases::from_amplitudes(gate_map(cfg, control)?.diagonal()))
}

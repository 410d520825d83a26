//! The right-hand side `−i·H(t)` restricted to the subspace reachable from the
//! initial state, in the polynomial-in-Ω form the Taylor integrator needs.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::model::{
    pair_parts, single_atom_parts, with_decay, Blockade, Drive780, DriveConfig, HamiltonianParts, PAIR_DIM,
    PROJECTED_DIM, SINGLE_DIM,
};
use crate::waveform::BernsteinPolynomial;

use super::EvolutionControl;

/// Coordinate-format sparse matrix.
#[derive(Debug, Clone, Default)]
pub(crate) struct SparseOp {
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    fn from_dense(m: &DMatrix<C64>, factor: C64) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v != C64::new(0.0, 0.0) {
                    entries.push((i, j, v * factor));
                }
            }
        }
        Self { entries }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `y += self · x`.
    #[inline]
    pub(crate) fn apply_add(&self, x: &[C64], y: &mut [C64]) {
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
    }
}

/// Ω_780(t) before trap and intensity scaling, with local Taylor expansion.
#[derive(Debug, Clone)]
pub(crate) enum EnvelopeSource {
    Modulated { poly: BernsteinPolynomial, gate_time: f64 },
    Constant(f64),
}

impl EnvelopeSource {
    fn new(drive: &Drive780) -> Self {
        match drive {
            Drive780::Modulated(spec) => Self::Modulated { poly: spec.polynomial(), gate_time: spec.gate_time },
            Drive780::Constant(o) => Self::Constant(*o),
        }
    }

    pub(crate) fn value(&self, t: f64) -> f64 {
        match self {
            Self::Modulated { poly, gate_time } => poly.value(t / gate_time),
            Self::Constant(o) => *o,
        }
    }

    /// Taylor coefficients in powers of (t' − t), μs units. Returns the number
    /// of non-zero leading entries written.
    pub(crate) fn taylor(&self, t: f64, out: &mut [f64]) -> usize {
        match self {
            Self::Modulated { poly, gate_time } => {
                let m = (poly.degree() + 1).min(out.len());
                poly.taylor(t / gate_time, &mut out[..m]);
                let mut scale = 1.0;
                for c in &mut out[..m] {
                    *c *= scale;
                    scale /= gate_time;
                }
                m
            }
            Self::Constant(o) => {
                out[0] = *o;
                1
            }
        }
    }
}

/// `−i·(H(t) − c)` on a reduced index set, with `c` a real spectral centre
/// removed to shrink the norm the step size has to resolve.
#[derive(Debug, Clone)]
pub(crate) struct Generator {
    /// Full-space index of each reduced coordinate.
    pub(crate) indices: Vec<usize>,
    pub(crate) full_dim: usize,
    pub(crate) a0: SparseOp,
    pub(crate) a1: SparseOp,
    pub(crate) a2: SparseOp,
    pub(crate) shift: f64,
    pub(crate) envelope: EnvelopeSource,
    /// Reduced, unshifted Hamiltonian parts (rad/μs), for the oracle.
    pub(crate) parts: HamiltonianParts,
}

impl Generator {
    /// Builds the generator for a state of dimension `dim`, keeping only the
    /// coordinates reachable from `support`.
    pub(crate) fn new(cfg: &DriveConfig, dim: usize, control: &EvolutionControl, support: &[usize]) -> Result<Self> {
        let mut parts = match dim {
            SINGLE_DIM => {
                let trap = *cfg
                    .traps
                    .get(control.trap)
                    .ok_or_else(|| Error::invalid(format!("trap index {} out of range", control.trap)))?;
                single_atom_parts(cfg, trap, control.model)?
            }
            PROJECTED_DIM | PAIR_DIM => {
                let expected = match cfg.blockade {
                    Blockade::Infinite => PROJECTED_DIM,
                    Blockade::Finite(_) => PAIR_DIM,
                };
                if dim != expected {
                    return Err(Error::invalid(format!(
                        "state dimension {dim} does not match the blockade model (expected {expected})"
                    )));
                }
                pair_parts(cfg, control.model)?
            }
            _ => return Err(Error::invalid(format!("no model of dimension {dim}"))),
        };
        if control.gamma_p != 0.0 || control.gamma_r != 0.0 {
            parts.static_part = with_decay(&parts.static_part, control.gamma_p, control.gamma_r)?;
        }

        let indices = reachable(&parts, support);
        let reduce = |m: &DMatrix<C64>| DMatrix::from_fn(indices.len(), indices.len(), |i, j| m[(indices[i], indices[j])]);
        let parts = HamiltonianParts {
            static_part: reduce(&parts.static_part),
            linear: reduce(&parts.linear),
            quadratic: reduce(&parts.quadratic),
            projected: parts.projected,
        };

        let diag = parts.static_part.diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d.re), hi.max(d.re)));
        let shift = if lo.is_finite() { 0.5 * (lo + hi) } else { 0.0 };
        let mut shifted = parts.static_part.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] -= C64::new(shift, 0.0);
        }

        let minus_i = C64::new(0.0, -1.0);
        Ok(Self {
            full_dim: dim,
            a0: SparseOp::from_dense(&shifted, minus_i),
            a1: SparseOp::from_dense(&parts.linear, minus_i),
            a2: SparseOp::from_dense(&parts.quadratic, minus_i),
            indices,
            shift,
            envelope: EnvelopeSource::new(&cfg.drive),
            parts,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.indices.len()
    }

    /// Reduced Hamiltonian at t (unshifted, rad/μs).
    pub(crate) fn hamiltonian(&self, t: f64) -> DMatrix<C64> {
        self.parts.at(self.envelope.value(t))
    }

    pub(crate) fn restrict(&self, full: &[C64]) -> Vec<C64> {
        self.indices.iter().map(|&i| full[i]).collect()
    }

    pub(crate) fn expand(&self, reduced: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.full_dim];
        for (&i, &v) in self.indices.iter().zip(reduced) {
            out[i] = v;
        }
        out
    }
}

/// Indices connected to `support` through any non-zero off-diagonal entry, in
/// ascending order.
fn reachable(parts: &HamiltonianParts, support: &[usize]) -> Vec<usize> {
    let n = parts.dim();
    let zero = C64::new(0.0, 0.0);
    let coupled = |i: usize, j: usize| {
        parts.static_part[(i, j)] != zero || parts.linear[(i, j)] != zero || parts.quadratic[(i, j)] != zero
    };
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = support.iter().copied().filter(|&i| i < n).collect();
    for &i in &stack {
        seen[i] = true;
    }
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && (coupled(i, j) || coupled(j, i)) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    (0..n).filter(|&i| seen[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Level, PairLabel};

    #[test]
    fn reachable_sets_match_ladder_structure() {
        let cfg = DriveConfig::default();
        let ctl = EvolutionControl::default();
        let g01 = Generator::new(&cfg, PROJECTED_DIM, &ctl, &[PairLabel(Level::Zero, Level::One).index()]).unwrap();
        assert_eq!(g01.dim(), 3);
        let g11 = Generator::new(&cfg, PROJECTED_DIM, &ctl, &[PairLabel(Level::One, Level::One).index()]).unwrap();
        assert_eq!(g11.dim(), 8);
        let g00 = Generator::new(&cfg, PROJECTED_DIM, &ctl, &[0]).unwrap();
        assert_eq!(g00.dim(), 1);
        assert!(g00.a0.is_empty() && g00.a1.is_empty());
    }

    #[test]
    fn envelope_taylor_matches_finite_differences() {
        let src = EnvelopeSource::new(&DriveConfig::default().drive);
        let mut c = [0.0; 12];
        let m = src.taylor(0.7, &mut c);
        assert_eq!(m, 10);
        let h = 1e-4;
        let d1 = (src.value(0.7 + h) - src.value(0.7 - h)) / (2.0 * h);
        assert!((c[0] - src.value(0.7)).abs() < 1e-12);
        assert!((c[1] - d1).abs() < 1e-5 * d1.abs().max(1.0));
        let s = 0.013;
        let series: f64 = c[..m].iter().rev().fold(0.0, |acc, &x| acc * s + x);
        assert!((series - src.value(0.7 + s)).abs() < 1e-10);
    }
}

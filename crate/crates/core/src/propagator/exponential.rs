//! Piecewise matrix-exponential propagator, kept as the reference oracle for
//! the adaptive integrator.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::model::{DriveConfig, QuantumState};

use super::generator::Generator;
use super::{check_span, support_of, EvolutionControl};

/// How H(t) is frozen on each of the uniform steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExponentialScheme {
    /// `exp(−i·H(t_mid)·dt)`, second order.
    Midpoint,
    /// Two-point Gauss–Legendre Magnus expansion, fourth order.
    Magnus4,
}

/// Propagates `initial` over `t_span` with `steps` uniform exponential steps.
/// `control` supplies the model kind, decay rates and trap index; its
/// tolerance is unused.
pub fn piecewise_exponential(
    cfg: &DriveConfig,
    initial: &QuantumState,
    t_span: (f64, f64),
    steps: usize,
    scheme: ExponentialScheme,
    control: &EvolutionControl,
) -> Result<QuantumState> {
    if steps == 0 {
        return Err(Error::invalid("at least one step is required"));
    }
    cfg.validate()?;
    check_span(cfg, t_span)?;
    let gen = Generator::new(cfg, initial.dim(), control, &support_of(initial))?;
    let (t0, t1) = t_span;
    let dt = (t1 - t0) / steps as f64;
    let minus_i = C64::new(0.0, -1.0);
    let mut psi = DVector::from_vec(gen.restrict(initial.amplitudes.as_slice()));
    for s in 0..steps {
        let start = t0 + s as f64 * dt;
        let exponent: DMatrix<C64> = match scheme {
            ExponentialScheme::Midpoint => gen.hamiltonian(start + 0.5 * dt) * (minus_i * dt),
            ExponentialScheme::Magnus4 => {
                let off = 3f64.sqrt() / 6.0;
                let a1 = gen.hamiltonian(start + (0.5 - off) * dt) * minus_i;
                let a2 = gen.hamiltonian(start + (0.5 + off) * dt) * minus_i;
                let comm = &a2 * &a1 - &a1 * &a2;
                (&a1 + &a2) * C64::from(0.5 * dt) + comm * C64::from(3f64.sqrt() * dt * dt / 12.0)
            }
        };
        psi = exponent.exp() * psi;
    }
    Ok(QuantumState::new(DVector::from_vec(gen.expand(psi.as_slice()))))
}

//! Adaptive explicit Taylor-series integrator.
//!
//! With `H(t) = H₀ + Ω(t)H₁ + Ω(t)²H₂` and Ω a polynomial, the Taylor
//! coefficients of ψ around the current time follow from the recurrence
//! `(k+1)ψ_{k+1} = A₀ψ_k + A₁Σ_j f_j ψ_{k−j} + A₂Σ_j g_j ψ_{k−j}` with `A = −iH`,
//! `f_j` the Taylor coefficients of Ω and `g = f*f`. The step size comes from the
//! last two coefficient norms, and the series itself is the dense output.
//! The per-step bound is the tolerance scaled by the step's share of the span.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

use super::generator::Generator;
use super::EvolutionControl;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

/// Integrates from `t0` to `t1` on the generator's reduced space. For every
/// entry of the sorted `samples` slice, `on_sample(i, ψ(samples[i]))` is called
/// once, in order. Returns ψ(t1) and the number of steps taken.
pub(crate) fn integrate<F>(
    gen: &Generator,
    psi0: &[C64],
    (t0, t1): (f64, f64),
    ctl: &EvolutionControl,
    samples: &[f64],
    mut on_sample: F,
) -> Result<(Vec<C64>, usize)>
where
    F: FnMut(usize, &[C64]),
{
    let n = gen.dim();
    let order = ctl.order;
    let rotate = |v: &mut [C64], t: f64| {
        if gen.shift != 0.0 {
            let phase = C64::from_polar(1.0, -gen.shift * (t - t0));
            v.iter_mut().for_each(|a| *a *= phase);
        }
    };

    let mut psi = psi0.to_vec();
    let mut out = vec![ZERO; n];
    let mut next_sample = 0;
    while next_sample < samples.len() && samples[next_sample] <= t0 {
        on_sample(next_sample, &psi);
        next_sample += 1;
    }

    let mut coeffs = vec![ZERO; (order + 1) * n];
    let mut f = vec![0.0; order + 1];
    let mut g = vec![0.0; order + 1];
    let mut w = vec![ZERO; n];
    let mut t = t0;
    let mut steps = 0;
    let span = (t1 - t0).max(f64::MIN_POSITIVE);

    while t < t1 {
        let norm0 = norm(&psi);
        if norm0 == 0.0 {
            break;
        }
        f.iter_mut().for_each(|x| *x = 0.0);
        let nf = gen.envelope.taylor(t, &mut f);
        let ng = if gen.a2.is_empty() {
            0
        } else {
            let ng = (2 * nf - 1).min(order + 1);
            for (j, gj) in g.iter_mut().enumerate().take(ng) {
                *gj = (0..=j).filter(|&i| i < nf && j - i < nf).map(|i| f[i] * f[j - i]).sum();
            }
            ng
        };

        coeffs[..n].copy_from_slice(&psi);
        for k in 0..order {
            let (done, rest) = coeffs.split_at_mut((k + 1) * n);
            let next = &mut rest[..n];
            next.iter_mut().for_each(|x| *x = ZERO);
            gen.a0.apply_add(&done[k * n..], next);
            for (a, taylor, len) in [(&gen.a1, &f, nf), (&gen.a2, &g, ng)] {
                if a.is_empty() {
                    continue;
                }
                w.iter_mut().for_each(|x| *x = ZERO);
                for j in 0..len.min(k + 1) {
                    let c = taylor[j];
                    if c == 0.0 {
                        continue;
                    }
                    let src = &done[(k - j) * n..(k - j + 1) * n];
                    for (wi, si) in w.iter_mut().zip(src) {
                        *wi += si * c;
                    }
                }
                a.apply_add(&w, next);
            }
            let inv = 1.0 / (k + 1) as f64;
            next.iter_mut().for_each(|x| *x *= inv);
        }

        // Bound the error per step by tol·(h/span), so the accumulated
        // error over the whole span also stays below tol.
        let tail = [order - 1, order].map(|k| (k, norm(&coeffs[k * n..(k + 1) * n])));
        let step_for = |bound: f64| {
            tail.iter()
                .filter(|(_, rk)| *rk > 0.0)
                .fold(t1 - t, |h, &(k, rk)| h.min((bound * norm0 / rk).powf(1.0 / k as f64)))
        };
        let mut h = step_for(ctl.tolerance);
        h = step_for(ctl.tolerance * (h / span).min(1.0));
        let last = h >= t1 - t;
        if !last && h < ctl.min_step {
            return Err(Error::IntegrationFailure {
                time: t,
                reason: format!("step size {h:.3e} us below the minimum {:.3e} us", ctl.min_step),
            });
        }
        let t_new = if last { t1 } else { t + h };

        while next_sample < samples.len() && samples[next_sample] <= t_new {
            let s = samples[next_sample];
            horner(&coeffs, n, s - t, &mut out);
            rotate(&mut out, s);
            on_sample(next_sample, &out);
            next_sample += 1;
        }
        horner(&coeffs, n, t_new - t, &mut psi);
        if psi.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::IntegrationFailure { time: t, reason: "non-finite amplitude".into() });
        }
        t = t_new;
        steps += 1;
        if steps > ctl.max_steps {
            return Err(Error::IntegrationFailure {
                time: t,
                reason: format!("exceeded {} steps", ctl.max_steps),
            });
        }
    }
    // Samples beyond t1 (or after a zero state) see the final value.
    rotate(&mut psi, t1);
    while next_sample < samples.len() {
        on_sample(next_sample, &psi);
        next_sample += 1;
    }
    Ok((psi, steps))
}

fn horner(coeffs: &[C64], n: usize, s: f64, out: &mut [C64]) {
    let order = coeffs.len() / n - 1;
    out.copy_from_slice(&coeffs[order * n..]);
    for k in (0..order).rev() {
        let c = &coeffs[k * n..(k + 1) * n];
        for (o, ci) in out.iter_mut().zip(c) {
            *o = *o * s + ci;
        }
    }
}

//! Curve fits used on simulated and measured signals: a damped sinusoid
//! (Levenberg–Marquardt seeded from the spectrum peak) and the linear
//! parity-oscillation model.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Matrix3, Matrix5, Vector3, Vector5};

use crate::error::{Error, Result};

/// `A·cos(2πft + φ)·exp(−γt) + C`, with f in MHz and t in μs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampedSinusoid {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub decay_rate: f64,
    pub offset: f64,
    pub rms_residual: f64,
}

impl DampedSinusoid {
    pub fn eval(&self, t: f64) -> f64 {
        model(&self.params(), t)
    }

    /// 1/γ in μs; infinite for an undamped or growing fit.
    pub fn decay_time(&self) -> f64 {
        if self.decay_rate > 0.0 {
            1.0 / self.decay_rate
        } else {
            f64::INFINITY
        }
    }

    fn params(&self) -> Vector5<f64> {
        Vector5::new(self.amplitude, self.frequency, self.phase, self.decay_rate, self.offset)
    }
}

fn model(p: &Vector5<f64>, t: f64) -> f64 {
    p[0] * (TAU * p[1] * t + p[2]).cos() * (-p[3] * t).exp() + p[4]
}

fn check_series(times: &[f64], values: &[f64], min_len: usize) -> Result<()> {
    if times.len() != values.len() {
        return Err(Error::invalid("times and values differ in length"));
    }
    if times.len() < min_len {
        return Err(Error::invalid(format!("need at least {min_len} samples, got {}", times.len())));
    }
    if times.iter().chain(values).any(|x| !x.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn periodogram(times: &[f64], centred: &[f64], f: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (t, y) in times.iter().zip(centred) {
        let (s, c) = (TAU * f * t).sin_cos();
        re += y * c;
        im += y * s;
    }
    re * re + im * im
}

/// Frequency (MHz) of the largest periodogram peak, refined by golden-section
/// search. The grid runs from half a cycle per record to the mean Nyquist
/// frequency.
pub fn spectrum_peak(times: &[f64], values: &[f64]) -> Result<f64> {
    check_series(times, values, 4)?;
    let span = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - times.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(span > 0.0) {
        return Err(Error::invalid("samples must span a positive time"));
    }
    let m = mean(values);
    let centred: Vec<f64> = values.iter().map(|v| v - m).collect();
    let df = 1.0 / (8.0 * span);
    let f_max = 0.5 * (times.len() - 1) as f64 / span;
    let mut best = (0.0, f64::NEG_INFINITY);
    let mut f = 0.5 / span;
    while f <= f_max {
        let p = periodogram(times, &centred, f);
        if p > best.1 {
            best = (f, p);
        }
        f += df;
    }
    let (mut a, mut b) = (best.0 - df, best.0 + df);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if periodogram(times, &centred, c) > periodogram(times, &centred, d) {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(0.5 * (a + b))
}

fn sse(p: &Vector5<f64>, times: &[f64], values: &[f64]) -> f64 {
    times.iter().zip(values).map(|(t, y)| (y - model(p, *t)).powi(2)).sum()
}

/// Fits a damped sinusoid by Levenberg–Marquardt. A signal without
/// appreciable oscillation is a fit failure.
pub fn fit_damped_sinusoid(times: &[f64], values: &[f64]) -> Result<DampedSinusoid> {
    check_series(times, values, 6)?;
    let n = values.len() as f64;
    let m = mean(values);
    let spread = values.iter().map(|v| (v - m).abs()).fold(0.0, f64::max);
    if spread < 1e-9 {
        return Err(Error::FitFailure { reason: "signal shows no oscillation".into(), residual: 0.0 });
    }
    let f0 = spectrum_peak(times, values)?;

    // Linear seed at the peak frequency: y ≈ a·cos + b·sin + C.
    let rows: Vec<[f64; 3]> = times.iter().map(|t| [(TAU * f0 * t).cos(), (TAU * f0 * t).sin(), 1.0]).collect();
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for (r, y) in rows.iter().zip(values) {
        let v = Vector3::from(*r);
        ata += v * v.transpose();
        aty += v * *y;
    }
    let seed = ata.lu().solve(&aty).unwrap_or(Vector3::new(spread, 0.0, m));
    let mut p = Vector5::new(seed[0].hypot(seed[1]), f0, (-seed[1]).atan2(seed[0]), 0.0, seed[2]);

    let mut cost = sse(&p, times, values);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let mut jtj = Matrix5::zeros();
        let mut jtr = Vector5::zeros();
        for (t, y) in times.iter().zip(values) {
            let e = (-p[3] * t).exp();
            let (s, c) = (TAU * p[1] * t + p[2]).sin_cos();
            let j = Vector5::new(c * e, -p[0] * s * e * TAU * t, -p[0] * s * e, -t * p[0] * c * e, 1.0);
            let r = y - model(&p, *t);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for i in 0..5 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let trial_cost = sse(&trial, times, values);
            if trial_cost.is_finite() && trial_cost < cost {
                let gain = cost - trial_cost;
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                improved = gain > 1e-15 * cost.max(1e-300);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let rms = (cost / n).sqrt();
    if !p.iter().all(|x| x.is_finite()) || !(p[1] > 0.0) {
        return Err(Error::FitFailure { reason: "non-physical fit parameters".into(), residual: rms });
    }
    if p[0] < 0.0 {
        p[0] = -p[0];
        p[2] += PI;
    }
    p[2] = crate::propagator::wrap_pi(p[2]);
    if rms > 0.5 * spread {
        return Err(Error::FitFailure { reason: "residual comparable to the signal".into(), residual: rms });
    }
    Ok(DampedSinusoid {
        amplitude: p[0],
        frequency: p[1],
        phase: p[2],
        decay_rate: p[3],
        offset: p[4],
        rms_residual: rms,
    })
}

/// `P(φ) = A·cos(2φ − θ) + C₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParityFit {
    pub amplitude: f64,
    pub amplitude_stderr: f64,
    pub phase: f64,
    pub offset: f64,
    pub rms_residual: f64,
}

/// Linear least squares for the parity model. With `stderr` given the fit is
/// weighted and the amplitude error comes from the covariance; otherwise the
/// residual variance sets the scale.
pub fn fit_parity(phases: &[f64], values: &[f64], stderr: Option<&[f64]>) -> Result<ParityFit> {
    check_series(phases, values, 4)?;
    if let Some(s) = stderr {
        if s.len() != values.len() || s.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::invalid("standard errors must be positive and match the data length"));
        }
    }
    let n = values.len();
    let design = DMatrix::from_fn(n, 3, |i, k| match k {
        0 => (2.0 * phases[i]).cos(),
        1 => (2.0 * phases[i]).sin(),
        _ => 1.0,
    });
    let w = DVector::from_fn(n, |i, _| stderr.map_or(1.0, |s| 1.0 / (s[i] * s[i])));
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for i in 0..n {
        let r = Vector3::new(design[(i, 0)], design[(i, 1)], design[(i, 2)]);
        ata += r * r.transpose() * w[i];
        aty += r * (values[i] * w[i]);
    }
    let cov = ata
        .try_inverse()
        .ok_or_else(|| Error::FitFailure { reason: "phase points do not determine the parity model".into(), residual: f64::NAN })?;
    let coef = cov * aty;
    let resid: Vec<f64> = (0..n)
        .map(|i| values[i] - (coef[0] * design[(i, 0)] + coef[1] * design[(i, 1)] + coef[2]))
        .collect();
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    let cov = match stderr {
        Some(_) => cov,
        None => cov * (rss / (n as f64 - 3.0).max(1.0)),
    };
    let (a, b) = (coef[0], coef[1]);
    let amp = a.hypot(b);
    let var = if amp > 0.0 {
        (a * a * cov[(0, 0)] + b * b * cov[(1, 1)] + 2.0 * a * b * cov[(0, 1)]) / (amp * amp)
    } else {
        cov[(0, 0)]
    };
    Ok(ParityFit {
        amplitude: amp,
        amplitude_stderr: var.max(0.0).sqrt(),
        phase: b.atan2(a),
        offset: coef[2],
        rms_residual: (rss / n as f64).sqrt(),
    })
}

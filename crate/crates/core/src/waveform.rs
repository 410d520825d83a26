//! Amplitude envelope of the 780-nm drive.
//!
//! The envelope is a symmetric combination of Bernstein basis polynomials,
//! `Ω(t)/2π = Σ_{ν=1..4} β_ν (b_{ν,n}(t/T) + b_{n-ν,n}(t/T))`, which starts and
//! ends at zero. Frequencies are linear (MHz) and times are in μs throughout.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::format_g9;

/// Number of symmetric basis pairs in the envelope.
pub const N_COEFFS: usize = 4;

/// Smallest admissible Bernstein degree: every index ν and n−ν for ν in 1..=4
/// must be a valid basis index.
pub const MIN_DEGREE: usize = 8;

/// Coefficients, Bernstein degree and duration of the modulated pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformSpec {
    /// β_1..β_4 in MHz.
    pub beta: [f64; N_COEFFS],
    /// Bernstein degree n.
    pub degree: usize,
    /// Gate duration T_g in μs.
    pub gate_time: f64,
}

impl Default for WaveformSpec {
    fn default() -> Self {
        Self {
            beta: [206.4, 90.1, 300.5, 195.97],
            degree: 9,
            gate_time: 2.0,
        }
    }
}

impl WaveformSpec {
    pub fn new(beta: [f64; N_COEFFS], degree: usize, gate_time: f64) -> Result<Self> {
        let spec = Self { beta, degree, gate_time };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.beta.iter().find(|b| !b.is_finite() || **b < 0.0) {
            return Err(Error::invalid(format!(
                "waveform coefficients must be finite and non-negative, got {b}"
            )));
        }
        if self.degree < MIN_DEGREE {
            return Err(Error::invalid(format!(
                "Bernstein degree must be at least {MIN_DEGREE}, got {}",
                self.degree
            )));
        }
        if !(self.gate_time.is_finite() && self.gate_time > 0.0) {
            return Err(Error::invalid(format!(
                "gate time must be positive, got {}",
                self.gate_time
            )));
        }
        Ok(())
    }

    /// Coefficients of the envelope in the degree-n Bernstein basis.
    ///
    /// For n = 8 and ν = 4 both members of the pair land on the same index and
    /// the coefficient is doubled.
    pub fn bernstein_coefficients(&self) -> Vec<f64> {
        let n = self.degree;
        let mut c = vec![0.0; n + 1];
        for (i, b) in self.beta.iter().enumerate() {
            let nu = i + 1;
            c[nu] += b;
            c[n - nu] += b;
        }
        c
    }

    pub fn polynomial(&self) -> BernsteinPolynomial {
        BernsteinPolynomial::new(self.bernstein_coefficients())
    }

    /// Maximum of the envelope over the gate window, in MHz.
    pub fn peak(&self) -> f64 {
        let poly = self.polynomial();
        let grid = 2000;
        let (mut best_x, mut best) = (0.0, f64::MIN);
        for i in 0..=grid {
            let x = i as f64 / grid as f64;
            let v = poly.value(x);
            if v > best {
                best = v;
                best_x = x;
            }
        }
        // golden-section refinement inside the neighbouring grid cells
        let h = 1.0 / grid as f64;
        let (mut a, mut b) = ((best_x - h).max(0.0), (best_x + h).min(1.0));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let x1 = b - g * (b - a);
            let x2 = a + g * (b - a);
            if poly.value(x1) < poly.value(x2) {
                a = x1;
            } else {
                b = x2;
            }
        }
        best.max(poly.value(0.5 * (a + b)))
    }
}

/// Binomial coefficient as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// The ν-th Bernstein basis polynomial of degree n, `C(n,ν) x^ν (1-x)^(n-ν)`.
pub fn bernstein_basis(nu: usize, n: usize, x: f64) -> Result<f64> {
    if nu > n {
        return Err(Error::invalid(format!(
            "basis index {nu} out of range for degree {n}"
        )));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid(format!("x = {x} outside [0, 1]")));
    }
    Ok(binomial(n, nu) * x.powi(nu as i32) * (1.0 - x).powi((n - nu) as i32))
}

/// A polynomial on [0, 1] in Bernstein form, with forward-difference tables
/// cached for derivative evaluation.
#[derive(Debug, Clone)]
pub struct BernsteinPolynomial {
    /// `diffs[j]` holds the j-th forward differences of the coefficients.
    diffs: Vec<Vec<f64>>,
}

impl BernsteinPolynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut diffs = vec![coeffs];
        while diffs.last().map_or(false, |d| d.len() > 1) {
            let prev = diffs.last().unwrap();
            let next = prev.windows(2).map(|w| w[1] - w[0]).collect();
            diffs.push(next);
        }
        Self { diffs }
    }

    pub fn degree(&self) -> usize {
        self.diffs[0].len() - 1
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.diffs[0]
    }

    pub fn value(&self, x: f64) -> f64 {
        de_casteljau(&self.diffs[0], x)
    }

    /// Scaled Taylor coefficients `f^(j)(x) / j!` for j = 0..out.len().
    /// Entries past the degree are zero.
    pub fn taylor(&self, x: f64, out: &mut [f64]) {
        let n = self.degree();
        for (j, o) in out.iter_mut().enumerate() {
            *o = if j > n {
                0.0
            } else {
                binomial(n, j) * de_casteljau(&self.diffs[j], x)
            };
        }
    }
}

fn de_casteljau(coeffs: &[f64], x: f64) -> f64 {
    const INLINE: usize = 32;
    let m = coeffs.len();
    let mut stack = [0.0; INLINE];
    let mut heap = Vec::new();
    let w: &mut [f64] = if m <= INLINE {
        stack[..m].copy_from_slice(coeffs);
        &mut stack[..m]
    } else {
        heap.extend_from_slice(coeffs);
        &mut heap
    };
    for r in 1..m {
        for k in 0..m - r {
            w[k] = (1.0 - x) * w[k] + x * w[k + 1];
        }
    }
    w[0]
}

/// Envelope value Ω(t)/2π in MHz.
pub fn envelope(spec: &WaveformSpec, t: f64) -> Result<f64> {
    spec.validate()?;
    check_time(spec, t)?;
    Ok(spec.polynomial().value(t / spec.gate_time))
}

fn check_time(spec: &WaveformSpec, t: f64) -> Result<()> {
    if !(0.0..=spec.gate_time).contains(&t) {
        return Err(Error::invalid(format!(
            "t = {t} us outside the gate window [0, {}]",
            spec.gate_time
        )));
    }
    Ok(())
}

/// Uniform samples of the envelope on [0, T_g], both endpoints included.
///
/// `sample_rate` is in samples per μs. When `T_g · rate` is not an integer the
/// grid is rounded to the nearest whole number of intervals.
pub fn sample_envelope(spec: &WaveformSpec, sample_rate: f64) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::invalid(format!(
            "sample rate must be positive, got {sample_rate}"
        )));
    }
    let intervals = (spec.gate_time * sample_rate).round().max(1.0) as usize;
    let poly = spec.polynomial();
    Ok((0..=intervals)
        .map(|i| {
            let x = i as f64 / intervals as f64;
            let t = if i == intervals { spec.gate_time } else { x * spec.gate_time };
            (t, poly.value(x))
        })
        .collect())
}

/// How a measured waveform is compared against the ideal envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviationMode {
    /// Values are Rabi-frequency amplitudes in MHz.
    Amplitude,
    /// Values are optical intensities normalized to a peak of 1.
    Intensity,
}

impl std::str::FromStr for DeviationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amplitude" => Ok(DeviationMode::Amplitude),
            "intensity" => Ok(DeviationMode::Intensity),
            other => Err(Error::invalid(format!(
                "unknown waveform mode '{other}' (expected amplitude|intensity)"
            ))),
        }
    }
}

/// Largest pointwise deviation of a measured series from the ideal waveform,
/// as a fraction of the ideal peak.
///
/// In intensity mode the ideal amplitude is squared and normalized to a peak of
/// one before comparison, so `measured` must hold relative intensities.
pub fn rf_deviation(measured: &[(f64, f64)], spec: &WaveformSpec, mode: DeviationMode) -> Result<f64> {
    spec.validate()?;
    if measured.is_empty() {
        return Err(Error::invalid("measured series is empty"));
    }
    let poly = spec.polynomial();
    let peak = spec.peak();
    if peak <= 0.0 {
        return Err(Error::invalid("ideal waveform is identically zero"));
    }
    let mut worst: f64 = 0.0;
    for &(t, m) in measured {
        // Timestamps read back from a 9-digit export may overshoot the
        // window edges by rounding.
        let slack = 1e-8 * spec.gate_time;
        let t = if t < 0.0 && t >= -slack {
            0.0
        } else if t > spec.gate_time && t <= spec.gate_time + slack {
            spec.gate_time
        } else {
            t
        };
        check_time(spec, t)?;
        let amp = poly.value(t / spec.gate_time);
        let dev = match mode {
            DeviationMode::Amplitude => (m - amp).abs() / peak,
            DeviationMode::Intensity => (m - (amp / peak).powi(2)).abs(),
        };
        worst = worst.max(dev);
    }
    Ok(worst)
}

/// Converts amplitude samples to the requested export representation.
pub fn to_mode(samples: &[(f64, f64)], mode: DeviationMode) -> Vec<(f64, f64)> {
    match mode {
        DeviationMode::Amplitude => samples.to_vec(),
        DeviationMode::Intensity => {
            let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.1));
            samples
                .iter()
                .map(|&(t, v)| (t, if peak > 0.0 { (v / peak).powi(2) } else { 0.0 }))
                .collect()
        }
    }
}

/// Writes samples as the two-column waveform CSV. `samples` must already be in
/// the representation named by `mode` (see [`to_mode`]).
pub fn write_waveform_csv<W: Write>(mut out: W, samples: &[(f64, f64)], mode: DeviationMode) -> Result<()> {
    let header = match mode {
        DeviationMode::Amplitude => "t_us,omega_MHz",
        DeviationMode::Intensity => "t_us,intensity_rel",
    };
    writeln!(out, "{header}")?;
    for &(t, v) in samples {
        writeln!(out, "{},{}", format_g9(t), format_g9(v))?;
    }
    Ok(())
}

/// Parses a two-column `time,value` series. A non-numeric first line is taken
/// as a header; blank lines and lines starting with `#` are skipped.
pub fn parse_series_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    let mut first = true;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let is_first = std::mem::replace(&mut first, false);
        let mut cols = line.split(',').map(str::trim);
        let (a, b) = match (cols.next(), cols.next(), cols.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    reason: "expected exactly two comma-separated columns".into(),
                })
            }
        };
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(t), Ok(v)) if t.is_finite() && v.is_finite() => out.push((t, v)),
            (Ok(_), Ok(_)) => {
                return Err(Error::Parse { line: line_no, reason: "non-finite value".into() })
            }
            _ if is_first => {} // header row
            _ => {
                return Err(Error::Parse { line: line_no, reason: format!("cannot parse '{line}'") })
            }
        }
    }
    Ok(out)
}

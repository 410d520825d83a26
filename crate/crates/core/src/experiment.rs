//! The Bell-state experiment: global microwave rotations around the gate
//! pulse, parity scans, shot-limited push-out detection and the
//! raw / lower-bound / SPAM-corrected bookkeeping.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;
use std::io::Write;

use log::warn;
use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector4};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{fit_parity, ParityFit};
use crate::format::format_g9;
use crate::model::{DriveConfig, Level, PairLabel, SINGLE_DIM, PAIR_DIM};
use crate::propagator::{gate_map, rabi_simulation, EvolutionControl, RabiMode, RabiOptions};
use crate::quadrature::gauss_hermite;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Indices of 00, 01, 10, 11 in the 16-dimensional pair basis.
const COMPUTATIONAL: [usize; 4] = [0, 1, 4, 5];

/// Classical imperfections of the experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Target 1/e decay of single-atom Rabi oscillations, μs. Used to tune
    /// `intensity_sigma`.
    pub rabi_decay_tau: f64,
    /// Fractional rms of the shot-to-shot Ω_780 factor.
    pub intensity_sigma: f64,
    /// Probability that an atom left in |r⟩ is lost before imaging.
    pub rydberg_detection_eff: f64,
    /// Optical-pumping efficiency into |1⟩.
    pub state_prep_eff: f64,
    /// Per-trap probability that an atom survives the sequence.
    pub atom_retention: f64,
    /// Per-atom SPAM probability used by the correction.
    pub spam_error: f64,
    pub shots: u64,
    pub seed: u64,
    /// Gauss–Hermite nodes averaging over the intensity factor.
    pub quadrature_nodes: usize,
}

/// σ that reproduces a 23 μs exponential-fit decay of the simulated
/// single-atom Rabi oscillation (Ω_780 = 217 MHz) over a 15 μs window.
/// The fitted decay depends on the window because Gaussian dephasing is
/// not exponential.
pub const CALIBRATED_INTENSITY_SIGMA: f64 = 0.0137;

/// Fit window, μs, used for the σ calibration.
pub const CALIBRATION_WINDOW: f64 = 15.0;

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            rabi_decay_tau: 23.0,
            intensity_sigma: CALIBRATED_INTENSITY_SIGMA,
            rydberg_detection_eff: 0.889,
            state_prep_eff: 0.992,
            atom_retention: 0.989,
            spam_error: 0.026,
            shots: 150,
            seed: 20220101,
            quadrature_nodes: 12,
        }
    }
}

impl NoiseModel {
    /// No noise at all: perfect preparation, retention and detection.
    pub fn perfect() -> Self {
        Self {
            intensity_sigma: 0.0,
            rydberg_detection_eff: 1.0,
            state_prep_eff: 1.0,
            atom_retention: 1.0,
            spam_error: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("rydberg_detection_eff", self.rydberg_detection_eff),
            ("state_prep_eff", self.state_prep_eff),
            ("atom_retention", self.atom_retention),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(0.0..0.5).contains(&self.spam_error) {
            return Err(Error::invalid(format!("spam_error must lie in [0, 0.5), got {}", self.spam_error)));
        }
        if !(self.rabi_decay_tau > 0.0 && self.rabi_decay_tau.is_finite()) {
            return Err(Error::invalid("rabi_decay_tau must be positive"));
        }
        if !(0.0..1.0).contains(&self.intensity_sigma) {
            return Err(Error::invalid("intensity_sigma must lie in [0, 1)"));
        }
        if self.shots == 0 {
            return Err(Error::invalid("shots must be at least 1"));
        }
        if !(1..=200).contains(&self.quadrature_nodes) {
            return Err(Error::invalid("quadrature_nodes must lie in [1, 200]"));
        }
        Ok(())
    }
}

/// Single-qubit rotation `cos(θ/2)·I − i·sin(θ/2)·(cosφ·X + sinφ·Y)` on
/// {|0⟩, |1⟩}.
pub fn rotation(theta: f64, phase: f64) -> Matrix2<C64> {
    let c = C64::new((theta / 2.0).cos(), 0.0);
    let s = (theta / 2.0).sin();
    // −i·s·(cosφ X + sinφ Y): off-diagonals −i·s·e^{∓iφ}
    let upper = C64::new(0.0, -s) * C64::from_polar(1.0, -phase);
    let lower = C64::new(0.0, -s) * C64::from_polar(1.0, phase);
    Matrix2::new(c, upper, lower, c)
}

/// Global rotation on both atoms over the 16-dimensional pair basis,
/// identity on |p⟩ and |r⟩.
pub fn microwave_pulse(theta: f64, phase: f64) -> DMatrix<C64> {
    let r = rotation(theta, phase);
    let mut single = DMatrix::<C64>::identity(SINGLE_DIM, SINGLE_DIM);
    for i in 0..2 {
        for j in 0..2 {
            single[(i, j)] = r[(i, j)];
        }
    }
    single.kronecker(&single)
}

/// The same rotation restricted to the 4-dimensional computational space.
pub fn microwave_pulse_computational(theta: f64, phase: f64) -> Matrix4<C64> {
    let r = rotation(theta, phase);
    Matrix4::from_fn(|i, j| r[(i / 2, j / 2)] * r[(i % 2, j % 2)])
}

/// What acts between the two microwave pulses.
#[derive(Debug, Clone, PartialEq)]
pub enum GateModel {
    /// The simulated pulse for this drive configuration.
    Simulated(DriveConfig),
    /// `diag(1, 1, 1, −1)`.
    IdealCz,
    /// No gate.
    Identity,
}

/// Output column (16-dim) for each computational input 00, 01, 10, 11.
type Columns = [DVector<C64>; 4];

fn gate_columns(gate: &GateModel, intensity: f64, control: &EvolutionControl) -> Result<Columns> {
    let unit = |k: usize, sign: f64| {
        let mut v = DVector::from_element(PAIR_DIM, ZERO);
        v[COMPUTATIONAL[k]] = C64::new(sign, 0.0);
        v
    };
    match gate {
        GateModel::Identity => Ok(std::array::from_fn(|k| unit(k, 1.0))),
        GateModel::IdealCz => Ok(std::array::from_fn(|k| unit(k, if k == 3 { -1.0 } else { 1.0 }))),
        GateModel::Simulated(cfg) => {
            let mut cfg = cfg.clone();
            cfg.intensity_factor *= intensity;
            let map = gate_map(&cfg, control)?;
            Ok(std::array::from_fn(|k| {
                let a = &map.columns[k].amplitudes;
                DVector::from_fn(PAIR_DIM, |i, _| if i < a.len() { a[i] } else { ZERO })
            }))
        }
    }
}

/// State after the gate, before the final analysis rotation.
fn after_gate(columns: &Columns) -> DVector<C64> {
    let start = microwave_pulse_computational(FRAC_PI_2, 0.0) * Vector4::new(ZERO, ZERO, ZERO, ONE);
    let mut psi = DVector::from_element(PAIR_DIM, ZERO);
    for (k, col) in columns.iter().enumerate() {
        psi += col * start[k];
    }
    psi
}

fn phi_plus_overlap(psi: &DVector<C64>) -> f64 {
    ((psi[COMPUTATIONAL[0]] + psi[COMPUTATIONAL[3]]) / 2f64.sqrt()).norm_sqr()
}

/// Settings of the Bell sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct BellSettings {
    /// Fixed phase of the final 3π/4 pulse; scanned when `None`.
    pub compensation_phase: Option<f64>,
    /// Points of the compensation-phase scan.
    pub scan_points: usize,
}

impl Default for BellSettings {
    fn default() -> Self {
        Self { compensation_phase: None, scan_points: 64 }
    }
}

#[derive(Debug, Clone)]
pub struct BellOutcome {
    /// Output state over the 16-dimensional pair basis.
    pub state: DVector<C64>,
    pub compensation_phase: f64,
    /// `|⟨Φ⁺|ψ⟩|²`.
    pub fidelity: f64,
}

/// Scans the final-pulse phase on a uniform grid and refines the best point
/// by a parabola through its neighbours.
fn best_compensation(psi_gate: &DVector<C64>, points: usize) -> Result<f64> {
    if points < 3 {
        return Err(Error::invalid("compensation scan needs at least 3 points"));
    }
    let f = |phi: f64| phi_plus_overlap(&(microwave_pulse(3.0 * PI / 4.0, phi) * psi_gate));
    let h = TAU / points as f64;
    let values: Vec<f64> = (0..points).map(|k| f(k as f64 * h)).collect();
    let k = (0..points).max_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    let (ym, y0, yp) = (values[(k + points - 1) % points], values[k], values[(k + 1) % points]);
    let denom = ym - 2.0 * y0 + yp;
    let offset = if denom < 0.0 { 0.5 * (ym - yp) / denom } else { 0.0 };
    let refined = k as f64 * h + offset.clamp(-1.0, 1.0) * h;
    Ok(if f(refined) >= y0 { refined.rem_euclid(TAU) } else { k as f64 * h })
}

/// Runs `R(π/2, 0) → gate → R(3π/4, φ_c)` from |11⟩.
pub fn bell_sequence(gate: &GateModel, settings: &BellSettings, control: &EvolutionControl) -> Result<BellOutcome> {
    let columns = gate_columns(gate, 1.0, control)?;
    let psi_gate = after_gate(&columns);
    let phi = match settings.compensation_phase {
        Some(p) => p,
        None => best_compensation(&psi_gate, settings.scan_points)?,
    };
    let state = microwave_pulse(3.0 * PI / 4.0, phi) * psi_gate;
    Ok(BellOutcome { fidelity: phi_plus_overlap(&state), state, compensation_phase: phi })
}

/// A weighted set of pure states standing for a mixed state.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub members: Vec<(f64, DVector<C64>)>,
}

impl Ensemble {
    pub fn pure(state: DVector<C64>) -> Self {
        Self { members: vec![(1.0, state)] }
    }

    /// Outcome distribution over the 16 level pairs.
    pub fn distribution(&self) -> Vec<f64> {
        let mut d = vec![0.0; PAIR_DIM];
        for (w, s) in &self.members {
            for (di, a) in d.iter_mut().zip(s.iter()) {
                *di += w * a.norm_sqr();
            }
        }
        d
    }

    /// Applies the same unitary to every member.
    pub fn transformed(&self, u: &DMatrix<C64>) -> Self {
        Self { members: self.members.iter().map(|(w, s)| (*w, u * s)).collect() }
    }

    /// `|⟨Φ⁺|ρ|Φ⁺⟩|`.
    pub fn phi_plus_fidelity(&self) -> f64 {
        self.members.iter().map(|(w, s)| w * phi_plus_overlap(s)).sum()
    }
}

/// Bell-state ensemble averaged over the intensity noise. The compensation
/// phase is fixed from the nominal gate.
pub fn bell_ensemble(
    gate: &GateModel,
    noise: &NoiseModel,
    settings: &BellSettings,
    control: &EvolutionControl,
) -> Result<(Ensemble, f64)> {
    noise.validate()?;
    let nominal = bell_sequence(gate, settings, control)?;
    let phi = nominal.compensation_phase;
    if noise.intensity_sigma == 0.0 || !matches!(gate, GateModel::Simulated(_)) {
        return Ok((Ensemble::pure(nominal.state), phi));
    }
    let (nodes, weights) = gauss_hermite(noise.quadrature_nodes)?;
    let pulse = microwave_pulse(3.0 * PI / 4.0, phi);
    let members = nodes
        .par_iter()
        .zip(weights.par_iter())
        .map(|(x, w)| {
            let factor = (1.0 + noise.intensity_sigma * x).max(0.0);
            let columns = gate_columns(gate, factor, control)?;
            Ok((*w, &pulse * after_gate(&columns)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Ensemble { members }, phi))
}

/// `P00 + P11 − P01 − P10` of a distribution over 00, 01, 10, 11.
pub fn parity(p: &[f64; 4]) -> f64 {
    p[0] + p[3] - p[1] - p[2]
}

/// Computational populations of a 16-entry level distribution.
fn computational(dist: &[f64]) -> [f64; 4] {
    COMPUTATIONAL.map(|i| dist[i])
}

/// Exact parity after `R(π/2, φ)` at each analysis phase, with the fit.
#[derive(Debug, Clone)]
pub struct ParityScan {
    pub phases: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub fit: ParityFit,
}

fn check_scan_phases(phases: &[f64]) -> Result<()> {
    if phases.len() < 8 {
        return Err(Error::invalid(format!("parity scan needs at least 8 phases, got {}", phases.len())));
    }
    let span = phases.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - phases.iter().cloned().fold(f64::INFINITY, f64::min);
    // points spaced h apart over [0, π − h] already cover one period
    if span < PI * (1.0 - 1.0 / phases.len() as f64) - 1e-12 {
        return Err(Error::invalid("parity scan phases must span at least one period (π)"));
    }
    Ok(())
}

/// Noiseless parity scan of an ensemble.
pub fn parity_scan(state: &Ensemble, phases: &[f64]) -> Result<ParityScan> {
    check_scan_phases(phases)?;
    let values: Vec<f64> = phases
        .iter()
        .map(|&phi| parity(&computational(&state.transformed(&microwave_pulse(FRAC_PI_2, phi)).distribution())))
        .collect();
    let fit = fit_parity(phases, &values, None)?;
    Ok(ParityScan { phases: phases.to_vec(), values, stderr: vec![0.0; phases.len()], fit })
}

/// `n` phases uniformly covering [0, 2π).
pub fn scan_phases(n: usize) -> Vec<f64> {
    (0..n).map(|k| TAU * k as f64 / n as f64).collect()
}

/// Recorded outcome counts for 00, 01, 10, 11.
pub type Counts = [u64; 4];

/// Samples `noise.shots` push-out measurements of `dist`, a distribution over
/// the 16 level pairs (or over 00, 01, 10, 11). Each shot draws from its own
/// ChaCha stream position fixed by (seed, `stream`, shot index).
pub fn measure_shots(dist: &[f64], noise: &NoiseModel, pushout: bool, stream: u64) -> Result<Counts> {
    noise.validate()?;
    let full: Vec<f64> = match dist.len() {
        4 => {
            let mut f = vec![0.0; PAIR_DIM];
            for (k, &i) in COMPUTATIONAL.iter().enumerate() {
                f[i] = dist[k];
            }
            f
        }
        PAIR_DIM => dist.to_vec(),
        n => return Err(Error::invalid(format!("distribution must have 4 or 16 entries, got {n}"))),
    };
    let total: f64 = full.iter().sum();
    if full.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("distribution must be non-negative and sum to 1, sums to {total}")));
    }
    let cumulative: Vec<f64> = full
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();

    let mut counts = [0u64; 4];
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    rng.set_stream(stream);
    for shot in 0..noise.shots {
        // every shot consumes at most 14 words
        rng.set_word_pos(u128::from(shot) * 16);
        let u: f64 = rng.random::<f64>() * total;
        let idx = cumulative.iter().position(|&c| u < c).unwrap_or(PAIR_DIM - 1);
        let label = PairLabel::from_index(idx).expect("pair index");
        let a = record_atom(label.0, noise, pushout, &mut rng);
        let b = record_atom(label.1, noise, pushout, &mut rng);
        counts[2 * a + b] += 1;
    }
    Ok(counts)
}

/// 1 when the atom is absent at imaging, 0 when present.
fn record_atom(level: Level, noise: &NoiseModel, pushout: bool, rng: &mut ChaCha8Rng) -> usize {
    let prepared = rng.random::<f64>() < noise.state_prep_eff;
    let rydberg_lost = rng.random::<f64>() < noise.rydberg_detection_eff;
    let retained = rng.random::<f64>() < noise.atom_retention;
    if !retained {
        return 1;
    }
    if !prepared {
        // outside the qubit manifold: removed by the push-out beam
        return usize::from(pushout);
    }
    match level {
        Level::R => usize::from(rydberg_lost),
        Level::One | Level::P => usize::from(pushout),
        Level::Zero => 0,
    }
}

fn fractions(c: &Counts) -> [f64; 4] {
    let n: u64 = c.iter().sum();
    c.map(|k| k as f64 / n as f64)
}

/// `(P00 + P11)/2 + amplitude/2`, clamped to [0, 1] with a warning.
pub fn bell_fidelity(p00: f64, p11: f64, parity_amplitude: f64) -> Result<f64> {
    for (name, x) in [("P00", p00), ("P11", p11), ("parity amplitude", parity_amplitude)] {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::invalid(format!("{name} must lie in [0, 1], got {x}")));
        }
    }
    Ok(clamp_unit(0.5 * (p00 + p11) + 0.5 * parity_amplitude, "Bell fidelity"))
}

fn clamp_unit(x: f64, what: &str) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        warn!("{what} {x} outside [0, 1]; clamped");
    }
    x.clamp(0.0, 1.0)
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::invalid(format!("SPAM probability must lie in [0, 0.5), got {eps}")));
    }
    Ok(())
}

/// Per-atom SPAM channel: a true |0⟩ is recorded as |1⟩ with probability ε;
/// a true |1⟩ (absent after push-out) is always recorded as |1⟩.
fn spam_matrix(eps: f64) -> Matrix4<f64> {
    let m = Matrix2::new(1.0 - eps, 0.0, eps, 1.0);
    m.kronecker(&m)
}

/// Applies the SPAM channel to populations over 00, 01, 10, 11.
pub fn spam_forward(p: &[f64; 4], eps: f64) -> Result<[f64; 4]> {
    check_epsilon(eps)?;
    let v = spam_matrix(eps) * Vector4::from(*p);
    Ok([v[0], v[1], v[2], v[3]])
}

/// Inverts the SPAM channel on measured populations; entries are clamped to
/// [0, 1] with a warning.
pub fn spam_correct(p: &[f64; 4], eps: f64) -> Result<[f64; 4]> {
    check_epsilon(eps)?;
    let inv = spam_matrix(eps).try_inverse().expect("triangular with non-zero diagonal");
    let v = inv * Vector4::from(*p);
    Ok([0, 1, 2, 3].map(|i| clamp_unit(v[i], "corrected population")))
}

/// Parity amplitude divided by the two-atom survival factor (1 − ε)².
pub fn spam_correct_amplitude(amplitude: f64, eps: f64) -> Result<f64> {
    check_epsilon(eps)?;
    Ok(clamp_unit(amplitude / (1.0 - eps).powi(2), "corrected parity amplitude"))
}

/// One column of the calibration table. `population` is P00 + P11,
/// `coherence` the parity amplitude, and `fidelity` their mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableColumn {
    pub population: f64,
    pub coherence: f64,
    pub fidelity: f64,
}

impl TableColumn {
    fn new(population: f64, coherence: f64) -> Self {
        Self { population, coherence, fidelity: 0.5 * (population + coherence) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table1 {
    pub raw: TableColumn,
    pub lower_bound: TableColumn,
    pub corrected: TableColumn,
}

/// Builds the three columns from raw populations (00, 01, 10, 11), the raw
/// parity amplitude and the both-present fraction `q00` measured with the
/// push-out beam off.
///
/// The lower bound removes the loss-induced excess, `1 − q00`, from P00 + P11;
/// the corrected column inverts the SPAM channel on the raw populations and
/// rescales the amplitude.
pub fn calibration_table(raw: &[f64; 4], amplitude: f64, q00: f64, eps: f64) -> Result<Table1> {
    let pop = raw[0] + raw[3];
    let corrected = spam_correct(raw, eps)?;
    let lower = clamp_unit(pop - (1.0 - q00), "lower-bound population");
    Ok(Table1 {
        raw: TableColumn::new(pop, amplitude),
        lower_bound: TableColumn::new(lower, amplitude),
        corrected: TableColumn::new(
            clamp_unit(corrected[0] + corrected[3], "corrected population"),
            spam_correct_amplitude(amplitude, eps)?,
        ),
    })
}

/// Splits an aggregated P00 + P11 value into populations, with the even and
/// odd weights shared equally.
pub fn split_even_population(even: f64) -> [f64; 4] {
    [even / 2.0, (1.0 - even) / 2.0, (1.0 - even) / 2.0, even / 2.0]
}

/// One point of a measured parity scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParityPoint {
    pub phase: f64,
    pub parity: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Measured fractions of 00, 01, 10, 11.
    pub populations: [f64; 4],
    pub population_stderr: [f64; 4],
    pub parity_points: Vec<ParityPoint>,
    pub parity_fit: ParityFit,
    pub parity_amplitude: f64,
    /// Half the parity amplitude.
    pub coherence: f64,
    /// Both-present fraction with the push-out beam off.
    pub pushout_off_q00: f64,
    pub table: Table1,
    pub fidelity_raw: f64,
    pub fidelity_lower_bound: f64,
    pub fidelity_corrected: f64,
    pub fidelity_stderr: f64,
    /// Exact `⟨Φ⁺|ρ|Φ⁺⟩` before measurement.
    pub state_fidelity: f64,
    pub compensation_phase: f64,
    pub shots: u64,
}

/// Options of a full experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    pub parity_points: usize,
    /// Push-out beam on for the main population and parity measurements.
    pub pushout: bool,
    pub bell: BellSettings,
    pub control: EvolutionControl,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self { parity_points: 24, pushout: true, bell: BellSettings::default(), control: EvolutionControl::default() }
    }
}

fn binomial_stderr(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).max(0.0).sqrt()
}

/// Simulates the Bell experiment end to end and fills the calibration table.
pub fn run_table1(gate: &GateModel, noise: &NoiseModel, opts: &ExperimentOptions) -> Result<ExperimentResult> {
    noise.validate()?;
    let (ensemble, phi_c) = bell_ensemble(gate, noise, &opts.bell, &opts.control)?;
    let dist = ensemble.distribution();
    let n = noise.shots;

    let counts = measure_shots(&dist, noise, opts.pushout, 0)?;
    let populations = fractions(&counts);
    let population_stderr = populations.map(|p| binomial_stderr(p, n));
    let q00 = fractions(&measure_shots(&dist, noise, false, 1)?)[0];

    let phases = scan_phases(opts.parity_points);
    check_scan_phases(&phases)?;
    let parity_points = phases
        .iter()
        .enumerate()
        .map(|(k, &phi)| {
            let d = ensemble.transformed(&microwave_pulse(FRAC_PI_2, phi)).distribution();
            let f = fractions(&measure_shots(&d, noise, opts.pushout, 2 + k as u64)?);
            let odd = f[1] + f[2];
            let stderr = (2.0 * binomial_stderr(odd, n)).max(1.0 / n as f64);
            Ok(ParityPoint { phase: phi, parity: parity(&f), stderr })
        })
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = parity_points.iter().map(|p| p.parity).collect();
    let parity_fit = fit_parity(&phases, &values, None)?;
    let amplitude = clamp_unit(parity_fit.amplitude, "parity amplitude");

    let table = calibration_table(&populations, amplitude, q00, noise.spam_error)?;
    let even = populations[0] + populations[3];
    let fidelity_stderr = 0.5 * (binomial_stderr(even, n).powi(2) + parity_fit.amplitude_stderr.powi(2)).sqrt();
    Ok(ExperimentResult {
        populations,
        population_stderr,
        parity_points,
        parity_amplitude: amplitude,
        coherence: amplitude / 2.0,
        parity_fit,
        pushout_off_q00: q00,
        fidelity_raw: bell_fidelity(populations[0], populations[3], amplitude)?,
        fidelity_lower_bound: table.lower_bound.fidelity,
        fidelity_corrected: table.corrected.fidelity,
        table,
        fidelity_stderr,
        state_fidelity: ensemble.phi_plus_fidelity(),
        compensation_phase: phi_c,
        shots: n,
    })
}

impl ExperimentResult {
    /// Plain-text report: key-value summary followed by the table.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let g = format_g9;
        for (k, label) in ["00", "01", "10", "11"].iter().enumerate() {
            let _ = writeln!(s, "P{label} = {} +- {}", g(self.populations[k]), g(self.population_stderr[k]));
        }
        let _ = writeln!(s, "parity_amplitude = {} +- {}", g(self.parity_amplitude), g(self.parity_fit.amplitude_stderr));
        let _ = writeln!(s, "parity_phase_rad = {}", g(self.parity_fit.phase));
        let _ = writeln!(s, "parity_offset = {}", g(self.parity_fit.offset));
        let _ = writeln!(s, "coherence = {}", g(self.coherence));
        let _ = writeln!(s, "pushout_off_q00 = {}", g(self.pushout_off_q00));
        let _ = writeln!(s, "compensation_phase_rad = {}", g(self.compensation_phase));
        let _ = writeln!(s, "state_fidelity = {}", g(self.state_fidelity));
        let _ = writeln!(s, "fidelity_raw = {} +- {}", g(self.fidelity_raw), g(self.fidelity_stderr));
        let _ = writeln!(s, "fidelity_lower_bound = {}", g(self.fidelity_lower_bound));
        let _ = writeln!(s, "fidelity_corrected = {}", g(self.fidelity_corrected));
        let _ = writeln!(s, "shots = {}", self.shots);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12}{:>12}{:>14}{:>12}", "", "raw", "lower_bound", "corrected");
        let t = &self.table;
        for (name, f) in [
            ("population", (|c: &TableColumn| c.population) as fn(&TableColumn) -> f64),
            ("coherence", |c| c.coherence),
            ("fidelity", |c| c.fidelity),
        ] {
            let _ = writeln!(
                s,
                "{:<12}{:>12.4}{:>14.4}{:>12.4}",
                name,
                f(&t.raw),
                f(&t.lower_bound),
                f(&t.corrected)
            );
        }
        s
    }
}

/// Writes `phase_rad,parity,stderr`.
pub fn write_parity_csv<W: Write>(mut out: W, points: &[ParityPoint]) -> Result<()> {
    writeln!(out, "phase_rad,parity,stderr")?;
    for p in points {
        writeln!(out, "{},{},{}", format_g9(p.phase), format_g9(p.parity), format_g9(p.stderr))?;
    }
    Ok(())
}

/// Simulated single-atom Rabi decay time for a given intensity σ: a constant
/// resonant drive fitted over `window` μs.
pub fn rabi_decay_time(cfg: &DriveConfig, sigma: f64, window: f64, nodes: usize) -> Result<f64> {
    let opts = RabiOptions {
        mode: RabiMode::Single,
        duration: window,
        n_points: (window * 40.0).ceil() as usize + 1,
        intensity_sigma: sigma,
        quadrature_nodes: nodes,
        control: EvolutionControl::default(),
    };
    Ok(rabi_simulation(cfg, &opts)?.decay_time())
}

/// Bisects σ so that the fitted decay time equals `target_tau`.
pub fn calibrate_intensity_sigma(cfg: &DriveConfig, target_tau: f64, window: f64, nodes: usize) -> Result<f64> {
    let (mut lo, mut hi) = (1e-4, 0.05);
    if rabi_decay_time(cfg, hi, window, nodes)? > target_tau || rabi_decay_time(cfg, lo, window, nodes)? < target_tau {
        return Err(Error::invalid(format!("decay time {target_tau} us not bracketed by sigma in [{lo}, {hi}]")));
    }
    for _ in 0..30 {
        let mid = (lo * hi).sqrt();
        if rabi_decay_time(cfg, mid, window, nodes)? > target_tau {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-4 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Matrix4<C64>, b: &Matrix4<C64>, tol: f64) -> bool {
        (a - b).iter().all(|x| x.norm() < tol)
    }

    #[test]
    fn rotation_examples() {
        let id = rotation(0.0, 0.3);
        assert!((id - Matrix2::identity()).iter().all(|x| x.norm() < 1e-15));
        let x = rotation(PI, 0.0);
        let out = x * nalgebra::Vector2::new(ZERO, ONE);
        assert!((out[0] - C64::new(0.0, -1.0)).norm() < 1e-15 && out[1].norm() < 1e-15);
        let half = microwave_pulse_computational(FRAC_PI_2, 0.0);
        assert!(close(&(half * half), &microwave_pulse_computational(PI, 0.0), 1e-12));
    }

    #[test]
    fn ideal_cz_gives_phi_plus() {
        let out = bell_sequence(&GateModel::IdealCz, &BellSettings::default(), &EvolutionControl::default()).unwrap();
        assert!((out.fidelity - 1.0).abs() < 1e-9, "{}", out.fidelity);
    }

    #[test]
    fn identity_gate_stays_classical() {
        let out = bell_sequence(&GateModel::Identity, &BellSettings::default(), &EvolutionControl::default()).unwrap();
        assert!(out.fidelity <= 0.5 + 1e-12);
    }

    #[test]
    fn fidelity_arithmetic() {
        assert!((bell_fidelity(0.485, 0.485, 0.92).unwrap() - 0.945).abs() < 1e-15);
        assert_eq!(bell_fidelity(0.5, 0.5, 1.0).unwrap(), 1.0);
        assert_eq!(bell_fidelity(0.5, 0.5, 0.0).unwrap(), 0.5);
        assert!(bell_fidelity(1.2, 0.0, 0.0).is_err());
    }

    #[test]
    fn spam_round_trip_and_limits() {
        let p = [0.5, 0.0, 0.0, 0.5];
        for eps in [0.0, 0.001, 0.026, 0.1] {
            let back = spam_correct(&spam_forward(&p, eps).unwrap(), eps).unwrap();
            for k in 0..4 {
                assert!((back[k] - p[k]).abs() < 1e-12);
            }
        }
        assert!(spam_correct(&p, 0.5).is_err());
        assert_eq!(spam_correct_amplitude(0.9, 0.0).unwrap(), 0.9);
    }

    #[test]
    fn shots_are_reproducible_and_seeded() {
        let noise = NoiseModel { shots: 500, ..NoiseModel::perfect() };
        let d = [0.25, 0.25, 0.25, 0.25];
        let a = measure_shots(&d, &noise, true, 3).unwrap();
        assert_eq!(a, measure_shots(&d, &noise, true, 3).unwrap());
        assert_ne!(a, measure_shots(&d, &noise, true, 4).unwrap());
        assert_eq!(a.iter().sum::<u64>(), 500);
        assert!(measure_shots(&[0.5, 0.2, 0.0, 0.0], &noise, true, 0).is_err());
    }

    #[test]
    fn pushout_off_keeps_prepared_atoms() {
        let noise = NoiseModel { shots: 200, ..NoiseModel::perfect() };
        let c = measure_shots(&[0.0, 0.0, 0.0, 1.0], &noise, false, 0).unwrap();
        assert_eq!(c, [200, 0, 0, 0]);
        let c = measure_shots(&[0.0, 0.0, 0.0, 1.0], &noise, true, 0).unwrap();
        assert_eq!(c, [0, 0, 0, 200]);
    }

    #[test]
    fn parity_scan_needs_a_period() {
        let e = Ensemble::pure(DVector::from_element(PAIR_DIM, ZERO));
        assert!(parity_scan(&e, &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]).is_err());
        assert!(parity_scan(&e, &scan_phases(4)).is_err());
    }
}

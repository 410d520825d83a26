//! Rotating-frame Hamiltonians for the two-photon ladder |1⟩ → |p⟩ → |r⟩.
//!
//! Per-atom basis order is `|0⟩, |1⟩, |p⟩, |r⟩`; the pair basis is the ordered
//! tensor product with `index(|a b⟩) = 4·index(a) + index(b)`, so `|rr⟩` is the
//! last entry and the infinite-blockade model is simply the leading 15×15 block.
//!
//! Matrices are returned in angular units (rad/μs): every linear frequency in
//! MHz is multiplied by 2π exactly once, here.

use std::f64::consts::TAU;
use std::fmt;

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::WaveformSpec;

/// Single-atom level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    /// Uncoupled hyperfine ground state.
    Zero,
    /// Coupled hyperfine ground state.
    One,
    /// Intermediate 5P level.
    P,
    /// Rydberg level.
    R,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Zero, Level::One, Level::P, Level::R];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Level> {
        Self::ALL.get(i).copied()
    }

    pub fn symbol(self) -> char {
        match self {
            Level::Zero => '0',
            Level::One => '1',
            Level::P => 'p',
            Level::R => 'r',
        }
    }

    fn from_symbol(c: char) -> Option<Level> {
        Self::ALL.into_iter().find(|l| l.symbol() == c)
    }
}

pub const SINGLE_DIM: usize = 4;
pub const PAIR_DIM: usize = 16;
/// Dimension of the pair space with `|rr⟩` removed.
pub const PROJECTED_DIM: usize = 15;

/// A two-atom basis label `|a b⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairLabel(pub Level, pub Level);

impl PairLabel {
    pub fn index(self) -> usize {
        4 * self.0.index() + self.1.index()
    }

    pub fn from_index(i: usize) -> Option<PairLabel> {
        if i >= PAIR_DIM {
            return None;
        }
        Some(PairLabel(Level::from_index(i / 4)?, Level::from_index(i % 4)?))
    }

    pub fn all() -> impl Iterator<Item = PairLabel> {
        (0..PAIR_DIM).map(|i| PairLabel::from_index(i).unwrap())
    }

    /// The four computational labels 00, 01, 10, 11 in that order.
    pub fn computational() -> [PairLabel; 4] {
        use Level::{One, Zero};
        [
            PairLabel(Zero, Zero),
            PairLabel(Zero, One),
            PairLabel(One, Zero),
            PairLabel(One, One),
        ]
    }

    pub fn swapped(self) -> PairLabel {
        PairLabel(self.1, self.0)
    }
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.0.symbol(), self.1.symbol())
    }
}

impl std::str::FromStr for PairLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next().and_then(Level::from_symbol), chars.next().and_then(Level::from_symbol), chars.next()) {
            (Some(a), Some(b), None) => Ok(PairLabel(a, b)),
            _ => Err(Error::invalid(format!("'{s}' is not a pair label like 01 or 1r"))),
        }
    }
}

/// Rydberg-Rydberg interaction shift on `|rr⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Blockade {
    /// Perfect blockade: `|rr⟩` is removed from the basis.
    Infinite,
    /// Finite shift B in MHz.
    Finite(f64),
}

impl Serialize for Blockade {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Blockade::Infinite => s.serialize_str("infinite"),
            Blockade::Finite(b) => s.serialize_f64(*b),
        }
    }
}

impl<'de> Deserialize<'de> for Blockade {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(b) => Ok(Blockade::Finite(b)),
            Raw::Int(b) => Ok(Blockade::Finite(b as f64)),
            Raw::Str(s) if s.eq_ignore_ascii_case("infinite") => Ok(Blockade::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "blockade must be a number in MHz or \"infinite\", got \"{s}\""
            ))),
        }
    }
}

/// How Ω_780 depends on time.
#[derive(Debug, Clone, PartialEq)]
pub enum Drive780 {
    /// Shaped pulse on [0, T_g].
    Modulated(WaveformSpec),
    /// Constant amplitude in MHz, switched on at t = 0 (Rabi experiments).
    Constant(f64),
}

/// Per-atom multiplicative factors on the two laser amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapScale {
    pub s780: f64,
    pub s480: f64,
}

impl Default for TrapScale {
    fn default() -> Self {
        Self { s780: 1.0, s480: 1.0 }
    }
}

/// Reference three-level ladder or its adiabatically eliminated two-level
/// reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    #[default]
    Full,
    Effective,
}

/// Laser and atom parameters defining the Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveConfig {
    pub drive: Drive780,
    /// Ω_480/2π in MHz.
    pub omega_480: f64,
    /// Intermediate detuning Δ/2π in MHz.
    pub delta_int: f64,
    /// Bare two-photon detuning δ/2π in MHz (the static Ω_480 light shift is
    /// not folded in).
    pub delta_2ph: f64,
    pub blockade: Blockade,
    /// Scale factors for trap 1 and trap 2.
    pub traps: [TrapScale; 2],
    /// Optional off-resonant light shift of |0⟩ in MHz (zero: fully dark).
    pub dark_shift: f64,
    /// Common multiplier on Ω_780 for both atoms, used for shot-to-shot
    /// intensity noise. Not subject to the trap-scale range check.
    pub intensity_factor: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self {
            drive: Drive780::Modulated(WaveformSpec::default()),
            omega_480: 50.0,
            delta_int: -5687.0,
            delta_2ph: 1.50,
            blockade: Blockade::Infinite,
            traps: [TrapScale::default(); 2],
            dark_shift: 0.0,
            intensity_factor: 1.0,
        }
    }
}

impl DriveConfig {
    /// Constant-drive configuration at two-photon resonance, for Rabi
    /// oscillation studies.
    pub fn constant_resonant(omega_780: f64, omega_480: f64, delta_int: f64) -> Result<Self> {
        let mut cfg = Self {
            drive: Drive780::Constant(omega_780),
            omega_480,
            delta_int,
            ..Self::default()
        };
        cfg.delta_2ph = cfg.resonant_delta(omega_780)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.drive {
            Drive780::Modulated(spec) => spec.validate()?,
            Drive780::Constant(o) => {
                if !(o.is_finite() && *o >= 0.0) {
                    return Err(Error::invalid(format!("constant Ω_780 must be non-negative, got {o}")));
                }
            }
        }
        if !(self.omega_480.is_finite() && self.omega_480 > 0.0) {
            return Err(Error::invalid(format!("Ω_480 must be positive, got {}", self.omega_480)));
        }
        if !self.delta_int.is_finite() || !self.delta_2ph.is_finite() || !self.dark_shift.is_finite() {
            return Err(Error::invalid("detunings must be finite"));
        }
        if let Blockade::Finite(b) = self.blockade {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::invalid(format!("blockade shift must be positive, got {b}")));
            }
        }
        for (i, t) in self.traps.iter().enumerate() {
            for s in [t.s780, t.s480] {
                if !(0.9..=1.1).contains(&s) {
                    return Err(Error::invalid(format!(
                        "trap {} scale factor {s} outside [0.9, 1.1]",
                        i + 1
                    )));
                }
            }
        }
        if !(self.intensity_factor.is_finite() && self.intensity_factor >= 0.0) {
            return Err(Error::invalid("intensity factor must be non-negative"));
        }
        let peak = self.peak_780();
        if self.delta_int.abs() <= 10.0 * peak {
            warn!(
                "|Δ| = {} MHz is not large compared with the peak Ω_780 = {peak} MHz; \
                 the off-resonant picture is questionable",
                self.delta_int.abs()
            );
        }
        Ok(())
    }

    /// End of the time domain on which the drive is defined.
    pub fn time_limit(&self) -> f64 {
        match &self.drive {
            Drive780::Modulated(spec) => spec.gate_time,
            Drive780::Constant(_) => f64::INFINITY,
        }
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.time_limit()) {
            return Err(Error::invalid(format!(
                "t = {t} us outside the drive window [0, {}]",
                self.time_limit()
            )));
        }
        Ok(())
    }

    /// Ω_780(t)/2π in MHz, before per-trap scaling.
    pub fn omega_780(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let base = match &self.drive {
            Drive780::Modulated(spec) => spec.polynomial().value(t / spec.gate_time),
            Drive780::Constant(o) => *o,
        };
        Ok(base * self.intensity_factor)
    }

    fn peak_780(&self) -> f64 {
        self.intensity_factor
            * match &self.drive {
                Drive780::Modulated(spec) => spec.peak(),
                Drive780::Constant(o) => *o,
            }
    }

    /// Bare δ that puts a constant drive of amplitude `omega_780` on
    /// two-photon resonance, including both light shifts.
    pub fn resonant_delta(&self, omega_780: f64) -> Result<f64> {
        if self.delta_int == 0.0 {
            return Err(Error::SingularConfiguration("intermediate detuning is zero".into()));
        }
        Ok((self.omega_480.powi(2) - omega_780.powi(2)) / (4.0 * self.delta_int))
    }
}

/// Hamiltonian split by time dependence,
/// `H(t) = static + Ω(t)·linear + Ω(t)²·quadratic`, with Ω the unscaled
/// Ω_780/2π in MHz and matrices in rad/μs. Trap scales and the intensity factor
/// are already folded into `linear` and `quadratic`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianParts {
    pub static_part: DMatrix<C64>,
    pub linear: DMatrix<C64>,
    pub quadratic: DMatrix<C64>,
    /// True when `|rr⟩` has been projected out.
    pub projected: bool,
}

impl HamiltonianParts {
    pub fn dim(&self) -> usize {
        self.static_part.nrows()
    }

    pub fn at(&self, omega: f64) -> DMatrix<C64> {
        &self.static_part + &self.linear * C64::from(omega) + &self.quadratic * C64::from(omega * omega)
    }

    fn zeros(dim: usize, projected: bool) -> Self {
        Self {
            static_part: DMatrix::zeros(dim, dim),
            linear: DMatrix::zeros(dim, dim),
            quadratic: DMatrix::zeros(dim, dim),
            projected,
        }
    }
}

fn real(x: f64) -> C64 {
    C64::new(TAU * x, 0.0)
}

/// Single-atom parts in the `|0⟩,|1⟩,|p⟩,|r⟩` basis.
pub fn single_atom_parts(cfg: &DriveConfig, scale: TrapScale, kind: ModelKind) -> Result<HamiltonianParts> {
    use Level::*;
    let mut h = HamiltonianParts::zeros(SINGLE_DIM, false);
    let (z, o, p, r) = (Zero.index(), One.index(), P.index(), R.index());
    h.static_part[(z, z)] = real(cfg.dark_shift);
    match kind {
        ModelKind::Full => {
            h.static_part[(p, p)] = real(-cfg.delta_int);
            h.static_part[(r, r)] = real(-cfg.delta_2ph);
            let c480 = real(scale.s480 * cfg.omega_480 / 2.0);
            h.static_part[(p, r)] = c480;
            h.static_part[(r, p)] = c480;
            let c780 = real(scale.s780 * cfg.intensity_factor / 2.0);
            h.linear[(o, p)] = c780;
            h.linear[(p, o)] = c780;
        }
        ModelKind::Effective => {
            if cfg.delta_int == 0.0 {
                return Err(Error::SingularConfiguration("intermediate detuning is zero".into()));
            }
            let d4 = 4.0 * cfg.delta_int;
            let a = scale.s780 * cfg.intensity_factor;
            let b = scale.s480 * cfg.omega_480;
            h.static_part[(p, p)] = real(-cfg.delta_int);
            h.static_part[(r, r)] = real(-cfg.delta_2ph + b * b / d4);
            h.quadratic[(o, o)] = real(a * a / d4);
            let c = real(a * b / d4);
            h.linear[(o, r)] = c;
            h.linear[(r, o)] = c;
        }
    }
    Ok(h)
}

/// Pair parts: `H₁⊗I + I⊗H₂` plus the blockade shift, or the projected
/// 15-dimensional model for infinite blockade.
pub fn pair_parts(cfg: &DriveConfig, kind: ModelKind) -> Result<HamiltonianParts> {
    let a = single_atom_parts(cfg, cfg.traps[0], kind)?;
    let b = single_atom_parts(cfg, cfg.traps[1], kind)?;
    let id = DMatrix::<C64>::identity(SINGLE_DIM, SINGLE_DIM);
    let sum = |x: &DMatrix<C64>, y: &DMatrix<C64>| x.kronecker(&id) + id.kronecker(y);
    let mut full = HamiltonianParts {
        static_part: sum(&a.static_part, &b.static_part),
        linear: sum(&a.linear, &b.linear),
        quadratic: sum(&a.quadratic, &b.quadratic),
        projected: false,
    };
    let rr = PairLabel(Level::R, Level::R).index();
    match cfg.blockade {
        Blockade::Finite(shift) => {
            full.static_part[(rr, rr)] += real(shift);
            Ok(full)
        }
        Blockade::Infinite => {
            let n = PROJECTED_DIM;
            Ok(HamiltonianParts {
                static_part: full.static_part.view((0, 0), (n, n)).into_owned(),
                linear: full.linear.view((0, 0), (n, n)).into_owned(),
                quadratic: full.quadratic.view((0, 0), (n, n)).into_owned(),
                projected: true,
            })
        }
    }
}

/// Single-atom Hamiltonian at time t, rad/μs.
pub fn single_atom_h(cfg: &DriveConfig, t: f64, scale: TrapScale) -> Result<DMatrix<C64>> {
    cfg.validate()?;
    let omega = base_omega(cfg, t)?;
    Ok(single_atom_parts(cfg, scale, ModelKind::Full)?.at(omega))
}

/// Pair Hamiltonian at time t together with its projection flag.
#[derive(Debug, Clone)]
pub struct PairHamiltonian {
    pub matrix: DMatrix<C64>,
    pub projected: bool,
}

pub fn pair_h(cfg: &DriveConfig, t: f64) -> Result<PairHamiltonian> {
    cfg.validate()?;
    let omega = base_omega(cfg, t)?;
    let parts = pair_parts(cfg, ModelKind::Full)?;
    Ok(PairHamiltonian { matrix: parts.at(omega), projected: parts.projected })
}

/// Ω_780 without the intensity factor, which the parts already carry.
fn base_omega(cfg: &DriveConfig, t: f64) -> Result<f64> {
    cfg.check_time(t)?;
    Ok(match &cfg.drive {
        Drive780::Modulated(spec) => spec.polynomial().value(t / spec.gate_time),
        Drive780::Constant(o) => *o,
    })
}

/// Effective Rabi frequency and two-photon detuning (both MHz) of the
/// adiabatically eliminated model at time t, for trap-scale factors of one.
///
/// `omega_eff = Ω_780 Ω_480 / (2Δ)` is signed. With the `−Δ`, `−δ` diagonal
/// used by the three-level model the residual detuning is
/// `δ_eff = δ + Ω_780²/(4Δ) − Ω_480²/(4Δ)`; this is the sign that reproduces
/// the three-level dynamics.
pub fn effective_two_level(cfg: &DriveConfig, t: f64) -> Result<(f64, f64)> {
    if cfg.delta_int == 0.0 {
        return Err(Error::SingularConfiguration("intermediate detuning is zero".into()));
    }
    let o780 = cfg.omega_780(t)?;
    let d = cfg.delta_int;
    let omega_eff = o780 * cfg.omega_480 / (2.0 * d);
    let delta_eff = cfg.delta_2ph + o780 * o780 / (4.0 * d) - cfg.omega_480.powi(2) / (4.0 * d);
    Ok((omega_eff, delta_eff))
}

/// Basis labels for a matrix of the given dimension.
pub fn labels_for_dim(dim: usize) -> Result<Vec<String>> {
    match dim {
        SINGLE_DIM => Ok(Level::ALL.iter().map(|l| l.symbol().to_string()).collect()),
        PAIR_DIM | PROJECTED_DIM => Ok(PairLabel::all().take(dim).map(|l| l.to_string()).collect()),
        _ => Err(Error::invalid(format!("no level basis of dimension {dim}"))),
    }
}

/// Adds the anti-Hermitian decay term `−i·2π·γ/2` on every diagonal entry
/// whose label contains `p` (rate γ_p) or `r` (rate γ_r). Rates add for labels
/// with two excited atoms. Rates are in MHz.
pub fn with_decay(h: &DMatrix<C64>, gamma_p: f64, gamma_r: f64) -> Result<DMatrix<C64>> {
    if !(gamma_p >= 0.0 && gamma_r >= 0.0) {
        return Err(Error::invalid(format!(
            "decay rates must be non-negative, got γ_p = {gamma_p}, γ_r = {gamma_r}"
        )));
    }
    if h.nrows() != h.ncols() {
        return Err(Error::invalid("Hamiltonian must be square"));
    }
    let labels = labels_for_dim(h.nrows())?;
    let mut out = h.clone();
    for (i, label) in labels.iter().enumerate() {
        let rate: f64 = label
            .chars()
            .map(|c| match c {
                'p' => gamma_p,
                'r' => gamma_r,
                _ => 0.0,
            })
            .sum();
        out[(i, i)] -= C64::new(0.0, TAU * rate / 2.0);
    }
    Ok(out)
}

/// A state vector over the single-atom or pair basis.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    pub amplitudes: DVector<C64>,
}

impl QuantumState {
    pub fn new(amplitudes: DVector<C64>) -> Self {
        Self { amplitudes }
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::invalid(format!("basis index {index} out of range for dimension {dim}")));
        }
        let mut v = DVector::zeros(dim);
        v[index] = C64::new(1.0, 0.0);
        Ok(Self::new(v))
    }

    pub fn single(level: Level) -> Self {
        Self::basis(SINGLE_DIM, level.index()).unwrap()
    }

    pub fn pair(label: PairLabel, dim: usize) -> Result<Self> {
        Self::basis(dim, label.index())
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm_sqr() - 1.0).abs() <= tol
    }
}

/// Permutation matrix exchanging the two atoms.
pub fn swap_matrix(dim: usize) -> DMatrix<C64> {
    let mut s = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let j = PairLabel::from_index(i).unwrap().swapped().index();
        s[(j, i)] = C64::new(1.0, 0.0);
    }
    s
}

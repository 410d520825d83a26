//! Search over the four waveform coefficients and the two-photon detuning for
//! a pulse that returns the computational states and meets the CZ phase
//! condition.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::format_g9;
use crate::model::{Drive780, DriveConfig};
use crate::propagator::{gate_phases, wrap_pi, EvolutionControl, GatePhases};
use crate::waveform::WaveformSpec;

/// Number of free parameters: β₁..β₄ and δ, all in MHz.
pub const N_PARAMS: usize = 5;
pub type Params = [f64; N_PARAMS];

/// Header of the optimization log.
pub const LOG_HEADER: &str = "iteration,cost,beta1,beta2,beta3,beta4,delta_MHz";

/// Which branch of the CZ condition to aim for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetSign {
    Plus,
    #[default]
    Minus,
}

impl TargetSign {
    pub fn angle(self) -> f64 {
        match self {
            TargetSign::Plus => PI,
            TargetSign::Minus => -PI,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationProblem {
    /// Fixed parameters (degree, gate time, Ω_480, Δ, traps, blockade). Its
    /// β and δ are overwritten by the free parameters.
    pub base: DriveConfig,
    pub lower: Params,
    pub upper: Params,
    pub w_pop: f64,
    pub w_phase: f64,
    pub target: TargetSign,
    pub control: EvolutionControl,
}

impl OptimizationProblem {
    /// Default bounds β ∈ [0, 800] MHz, δ ∈ [−10, 10] MHz and weights
    /// `w_pop = 1`, `w_phase = 1/π²`.
    pub fn new(base: DriveConfig) -> Result<Self> {
        let p = Self {
            base,
            lower: [0.0, 0.0, 0.0, 0.0, -10.0],
            upper: [800.0, 800.0, 800.0, 800.0, 10.0],
            w_pop: 1.0,
            w_phase: 1.0 / (PI * PI),
            target: TargetSign::Minus,
            control: EvolutionControl::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.base.drive, Drive780::Modulated(_)) {
            return Err(Error::invalid("optimization needs a modulated waveform"));
        }
        for i in 0..N_PARAMS {
            if !(self.lower[i].is_finite() && self.upper[i].is_finite() && self.lower[i] < self.upper[i]) {
                return Err(Error::invalid(format!(
                    "bounds for parameter {} must be finite with lower < upper, got [{}, {}]",
                    i + 1,
                    self.lower[i],
                    self.upper[i]
                )));
            }
        }
        if !(self.w_pop > 0.0 && self.w_phase > 0.0 && self.w_pop.is_finite() && self.w_phase.is_finite()) {
            return Err(Error::invalid("weights must be positive"));
        }
        self.control.validate()
    }

    pub fn spec(&self) -> &WaveformSpec {
        match &self.base.drive {
            Drive780::Modulated(s) => s,
            Drive780::Constant(_) => unreachable!("validated"),
        }
    }

    /// The free parameters currently held by `base`.
    pub fn initial_params(&self) -> Params {
        let b = self.spec().beta;
        [b[0], b[1], b[2], b[3], self.base.delta_2ph]
    }

    pub fn in_bounds(&self, p: &Params) -> bool {
        (0..N_PARAMS).all(|i| p[i] >= self.lower[i] && p[i] <= self.upper[i])
    }

    fn clamp(&self, p: &mut Params) {
        for i in 0..N_PARAMS {
            p[i] = p[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn config_for(&self, p: &Params) -> DriveConfig {
        let mut cfg = self.base.clone();
        let mut spec = self.spec().clone();
        spec.beta = [p[0], p[1], p[2], p[3]];
        cfg.drive = Drive780::Modulated(spec);
        cfg.delta_2ph = p[4];
        cfg
    }

    fn with_degree(&self, degree: usize) -> Self {
        let mut p = self.clone();
        let mut spec = self.spec().clone();
        spec.degree = degree;
        p.base.drive = Drive780::Modulated(spec);
        p
    }
}

/// Wrapped angular distance |a − b| on the circle.
pub fn phase_distance(a: f64, b: f64) -> f64 {
    wrap_pi(a - b).abs()
}

/// Cost of a gate given its phases; zero exactly for perfect return and an
/// exact condition.
pub fn cost_from_phases(problem: &OptimizationProblem, g: &GatePhases) -> f64 {
    let pop = (1.0 - g.p_return_01) + (1.0 - g.p_return_11);
    let d = phase_distance(g.condition, problem.target.angle());
    problem.w_pop * pop + problem.w_phase * d * d
}

pub fn gate_cost(problem: &OptimizationProblem, params: &Params) -> Result<f64> {
    Ok(evaluate(problem, params)?.0)
}

fn evaluate(problem: &OptimizationProblem, params: &Params) -> Result<(f64, GatePhases)> {
    if !problem.in_bounds(params) {
        return Err(Error::invalid(format!("parameters {params:?} outside the bounds")));
    }
    let g = gate_phases(&problem.config_for(params), &problem.control)?;
    Ok((cost_from_phases(problem, &g), g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    /// Budget of simplex iterations across all restarts.
    pub max_iterations: usize,
    /// Cost below which the result counts as converged.
    pub tolerance: f64,
    pub seed: u64,
    /// Number of restarts after the first descent.
    pub restarts: usize,
    /// Initial simplex edge relative to each parameter's magnitude.
    pub initial_step: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { max_iterations: 3000, tolerance: 1e-7, seed: 1, restarts: 3, initial_step: 0.05 }
    }
}

impl OptimizeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if !(self.initial_step > 0.0 && self.initial_step < 1.0) {
            return Err(Error::invalid("initial step must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Best-so-far record after each simplex iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub cost: f64,
    pub params: Params,
}

impl LogEntry {
    pub fn csv_row(&self) -> String {
        let mut row = vec![self.iteration.to_string(), format_g9(self.cost)];
        row.extend(self.params.iter().map(|p| format_g9(*p)));
        row.join(",")
    }
}

/// Why the search stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    CostBelowTolerance,
    SimplexCollapsed,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub params: Params,
    pub cost: f64,
    pub phases: GatePhases,
    pub iterations: usize,
    pub evaluations: usize,
    /// True when the cost fell below the tolerance.
    pub converged: bool,
    pub termination: Termination,
    pub history: Vec<LogEntry>,
}

pub fn optimize_waveform(problem: &OptimizationProblem, initial: &Params, opts: &OptimizeOptions) -> Result<OptimizationResult> {
    optimize_waveform_with(problem, initial, opts, |_| {})
}

/// As [`optimize_waveform`], calling `on_iteration` with each best-so-far
/// entry as it is produced.
pub fn optimize_waveform_with<F: FnMut(&LogEntry)>(
    problem: &OptimizationProblem,
    initial: &Params,
    opts: &OptimizeOptions,
    mut on_iteration: F,
) -> Result<OptimizationResult> {
    problem.validate()?;
    opts.validate()?;
    if !problem.in_bounds(initial) {
        return Err(Error::invalid(format!("initial parameters {initial:?} outside the bounds")));
    }
    let mut search = Search { problem, evaluations: 0, best: None };
    let f0 = search.eval(initial)?;
    let mut history = vec![LogEntry { iteration: 0, cost: f0, params: *initial }];
    on_iteration(&history[0]);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut iterations = 0;
    let mut termination = if f0 < opts.tolerance { Termination::CostBelowTolerance } else { Termination::IterationLimit };
    for run in 0..=opts.restarts {
        if termination == Termination::CostBelowTolerance || iterations >= opts.max_iterations {
            break;
        }
        let centre = search.best_params();
        let mut simplex = vec![(centre, search.best_cost())];
        for i in 0..N_PARAMS {
            let range = problem.upper[i] - problem.lower[i];
            let mut step = opts.initial_step * centre[i].abs().max(0.05 * range);
            if run > 0 {
                step *= rng.random_range(0.5..1.5);
                if rng.random_bool(0.5) {
                    step = -step;
                }
            }
            let mut v = centre;
            v[i] += step;
            if v[i] > problem.upper[i] || v[i] < problem.lower[i] {
                v[i] = centre[i] - step;
            }
            problem.clamp(&mut v);
            simplex.push((v, search.eval(&v)?));
        }
        termination = nelder_mead(&mut search, &mut simplex, opts, &mut iterations, |it, cost, params| {
            let e = LogEntry { iteration: it, cost, params };
            on_iteration(&e);
            history.push(e);
        })?;
    }

    let (params, cost, phases) = search.best.expect("at least one evaluation");
    Ok(OptimizationResult {
        params,
        cost,
        phases,
        iterations,
        evaluations: search.evaluations,
        converged: cost < opts.tolerance,
        termination,
        history,
    })
}

struct Search<'a> {
    problem: &'a OptimizationProblem,
    evaluations: usize,
    best: Option<(Params, f64, GatePhases)>,
}

impl Search<'_> {
    fn eval(&mut self, p: &Params) -> Result<f64> {
        let (cost, phases) = evaluate(self.problem, p)?;
        self.evaluations += 1;
        if self.best.as_ref().is_none_or(|b| cost < b.1) {
            self.best = Some((*p, cost, phases));
        }
        Ok(cost)
    }

    fn best_cost(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.1)
    }

    fn best_params(&self) -> Params {
        self.best.as_ref().expect("evaluated").0
    }
}

/// Bounded Nelder–Mead (trial points clamped into the box).
fn nelder_mead<F: FnMut(usize, f64, Params)>(
    search: &mut Search<'_>,
    simplex: &mut Vec<(Params, f64)>,
    opts: &OptimizeOptions,
    iterations: &mut usize,
    mut log: F,
) -> Result<Termination> {
    let problem = search.problem;
    let scale: Params = std::array::from_fn(|i| problem.upper[i] - problem.lower[i]);
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[0].1 < opts.tolerance {
            return Ok(Termination::CostBelowTolerance);
        }
        let best = simplex[0].0;
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(v, _)| (0..N_PARAMS).map(move |i| (v[i] - best[i]).abs() / scale[i]))
            .fold(0.0, f64::max);
        if diameter < 1e-6 {
            return Ok(Termination::SimplexCollapsed);
        }
        if *iterations >= opts.max_iterations {
            return Ok(Termination::IterationLimit);
        }
        *iterations += 1;

        let n = N_PARAMS;
        let mut centroid = [0.0; N_PARAMS];
        for (v, _) in &simplex[..n] {
            for i in 0..n {
                centroid[i] += v[i] / n as f64;
            }
        }
        let worst = simplex[n];
        let toward = |t: f64| {
            let mut p: Params = std::array::from_fn(|i| centroid[i] + t * (worst.0[i] - centroid[i]));
            problem.clamp(&mut p);
            p
        };

        let xr = toward(-1.0);
        let fr = search.eval(&xr)?;
        if fr < simplex[0].1 {
            let xe = toward(-2.0);
            let fe = search.eval(&xe)?;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let x = toward(-0.5);
                (x, search.eval(&x)?)
            } else {
                let x = toward(0.5);
                (x, search.eval(&x)?)
            };
            if fc < fr.min(worst.1) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    let p: Params = std::array::from_fn(|i| best[i] + 0.5 * (entry.0[i] - best[i]));
                    *entry = (p, search.eval(&p)?);
                }
            }
        }
        log(*iterations, search.best_cost(), search.best_params());
    }
}

/// One row of a degree sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub degree: usize,
    pub peak_780: f64,
    pub result: OptimizationResult,
}

/// Independent optimizations for each degree, run in parallel and sorted by
/// final cost.
pub fn sweep_degree(
    problem: &OptimizationProblem,
    degrees: &[usize],
    initial: &Params,
    opts: &OptimizeOptions,
) -> Result<Vec<SweepRow>> {
    if degrees.is_empty() {
        return Err(Error::invalid("degree sweep needs at least one degree"));
    }
    if let Some(d) = degrees.iter().find(|&&d| d < 8) {
        return Err(Error::invalid(format!("degree must be at least 8, got {d}")));
    }
    let mut rows = degrees
        .par_iter()
        .map(|&degree| {
            let p = problem.with_degree(degree);
            let result = optimize_waveform(&p, initial, opts)?;
            let mut spec = p.spec().clone();
            spec.beta = [result.params[0], result.params[1], result.params[2], result.params[3]];
            Ok(SweepRow { degree, peak_780: spec.peak(), result })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.result.cost.total_cmp(&b.result.cost));
    Ok(rows)
}

/// Writes the whole history as a log CSV.
pub fn write_log_csv<W: Write>(mut out: W, history: &[LogEntry]) -> Result<()> {
    writeln!(out, "{LOG_HEADER}")?;
    for e in history {
        writeln!(out, "{}", e.csv_row())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64 as C64;

    fn phases(p01: f64, p11: f64, condition: f64) -> GatePhases {
        GatePhases {
            phi_00: 0.0,
            phi_01: 0.0,
            phi_10: 0.0,
            phi_11: 0.0,
            p_return_01: p01,
            p_return_10: p01,
            p_return_11: p11,
            condition,
            amplitudes: [C64::new(1.0, 0.0); 4],
        }
    }

    #[test]
    fn cost_formula_examples() {
        let p = OptimizationProblem::new(DriveConfig::default()).unwrap();
        assert_eq!(cost_from_phases(&p, &phases(1.0, 1.0, -PI)), 0.0);
        assert!((cost_from_phases(&p, &phases(1.0, 0.99, -PI)) - 0.01).abs() < 1e-15);
        // +π and −π are the same point on the circle
        assert!(cost_from_phases(&p, &phases(1.0, 1.0, PI)) < 1e-30);
        let c = cost_from_phases(&p, &phases(1.0, 1.0, -PI + 0.1));
        assert!((c - 0.01 / (PI * PI)).abs() < 1e-15);
    }

    #[test]
    fn bounds_and_weights_validated() {
        let mut p = OptimizationProblem::new(DriveConfig::default()).unwrap();
        p.lower[2] = p.upper[2];
        assert!(p.validate().is_err());
        let mut p = OptimizationProblem::new(DriveConfig::default()).unwrap();
        p.w_phase = 0.0;
        assert!(p.validate().is_err());
        let p = OptimizationProblem::new(DriveConfig::default()).unwrap();
        assert!(gate_cost(&p, &[900.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn empty_or_low_degree_sweep_rejected() {
        let p = OptimizationProblem::new(DriveConfig::default()).unwrap();
        let x = p.initial_params();
        assert!(sweep_degree(&p, &[], &x, &OptimizeOptions::default()).is_err());
        assert!(sweep_degree(&p, &[7], &x, &OptimizeOptions::default()).is_err());
    }

    #[test]
    fn log_row_format() {
        let e = LogEntry { iteration: 3, cost: 0.5, params: [1.0, 2.0, 3.0, 4.0, -1.5] };
        assert_eq!(e.csv_row(), "3,0.5,1,2,3,4,-1.5");
    }
}

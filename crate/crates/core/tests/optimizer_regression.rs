use rydberg_gate::config::RunConfig;
use rydberg_gate::model::{Drive780, DriveConfig};
use rydberg_gate::optimizer::{gate_cost, optimize_waveform, write_log_csv, OptimizationProblem, OptimizeOptions};
use rydberg_gate::propagator::{gate_phases, wrap_2pi, EvolutionControl};
use rydberg_gate::waveform::WaveformSpec;

#[test]
fn published_parameters_cost() {
    let problem = OptimizationProblem::new(DriveConfig::default()).unwrap();
    let c = gate_cost(&problem, &problem.initial_params()).unwrap();
    assert!((c / 4.944752492706e-2 - 1.0).abs() < 1e-8, "{c}");
}

#[test]
fn shipped_optimized_config_is_converged() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/optimized.toml");
    let cfg = RunConfig::load(std::path::Path::new(path)).unwrap();
    let problem = cfg.optimization_problem().unwrap();
    let r = optimize_waveform(&problem, &problem.initial_params(), &cfg.optimize_options()).unwrap();
    assert!(r.converged);
    assert_eq!(r.iterations, 0);
    assert!(r.phases.p_return_01 > 0.9999 && r.phases.p_return_11 > 0.9999);
}

#[test]
fn condition_is_consistent_with_phases() {
    for (beta, n, delta) in [
        ([206.4, 90.1, 300.5, 195.97], 9, 1.5),
        ([150.0, 200.0, 100.0, 250.0], 11, -2.0),
        ([300.0, 50.0, 220.0, 180.0], 8, 0.4),
    ] {
        let cfg = DriveConfig {
            drive: Drive780::Modulated(WaveformSpec::new(beta, n, 2.0).unwrap()),
            delta_2ph: delta,
            ..DriveConfig::default()
        };
        let g = gate_phases(&cfg, &EvolutionControl::default()).unwrap();
        let from_phases = g.phi_00 - g.phi_01 - g.phi_10 + g.phi_11;
        assert!(wrap_2pi(g.condition - from_phases).abs() % std::f64::consts::TAU < 1e-9);
        assert!((g.phi_01 - g.phi_10).abs() < 1e-9);
        assert!((g.p_return_01 - g.p_return_10).abs() < 1e-9);
    }
}

#[test]
fn short_runs_are_deterministic_and_monotone() {
    let problem = OptimizationProblem::new(DriveConfig::default()).unwrap();
    // an unreachable tolerance forces every restart to run
    let opts = OptimizeOptions { tolerance: 1e-30, max_iterations: 24, restarts: 3, ..OptimizeOptions::default() };
    let a = optimize_waveform(&problem, &problem.initial_params(), &opts).unwrap();
    let b = optimize_waveform(&problem, &problem.initial_params(), &opts).unwrap();
    assert_eq!(a, b);
    assert!(!a.converged);
    assert!(a.history.windows(2).all(|w| w[1].cost <= w[0].cost));
    assert!(a.cost < a.history[0].cost);
    let mut csv = Vec::new();
    write_log_csv(&mut csv, &a.history).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), a.history.len() + 1);
}

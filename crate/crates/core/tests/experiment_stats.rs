use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use rydberg_gate::experiment::{
    measure_shots, parity, parity_scan, run_table1, scan_phases, spam_correct, spam_forward, Ensemble,
    ExperimentOptions, GateModel, NoiseModel,
};
use rydberg_gate::experiment::microwave_pulse_computational;
use rydberg_gate::model::PAIR_DIM;

const IDX: [usize; 4] = [0, 1, 4, 5];

fn embed(a: [C64; 4]) -> DVector<C64> {
    let mut v = DVector::from_element(PAIR_DIM, C64::new(0.0, 0.0));
    for (k, &i) in IDX.iter().enumerate() {
        v[i] = a[k];
    }
    v
}

fn sample_sd(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

proptest! {
    #[test]
    fn spam_channel_round_trips(w in prop::array::uniform4(0.0f64..1.0), eps in 0.0f64..0.3) {
        let total: f64 = w.iter().sum::<f64>() + 1e-12;
        let p = w.map(|x| x / total);
        let back = spam_correct(&spam_forward(&p, eps).unwrap(), eps).unwrap();
        for (a, b) in p.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn parity_has_period_pi(re in prop::array::uniform4(-1.0f64..1.0), im in prop::array::uniform4(-1.0f64..1.0), phi in 0.0f64..TAU) {
        let a: [C64; 4] = std::array::from_fn(|k| C64::new(re[k], im[k]));
        let norm = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let psi = nalgebra::Vector4::from(a.map(|x| x / norm));
        let at = |phi: f64| {
            let out = microwave_pulse_computational(PI / 2.0, phi) * psi;
            parity(&[0, 1, 2, 3].map(|i| out[i].norm_sqr()))
        };
        prop_assert!((at(phi) - at(phi + PI)).abs() < 1e-12);
    }
}

#[test]
fn dephased_mixture_has_no_parity_oscillation() {
    let members = (0..6)
        .map(|k| {
            let theta = TAU * k as f64 / 6.0;
            let h = C64::new(FRAC_1_SQRT_2, 0.0);
            (1.0 / 6.0, embed([h, C64::new(0.0, 0.0), C64::new(0.0, 0.0), h * C64::from_polar(1.0, theta)]))
        })
        .collect();
    let scan = parity_scan(&Ensemble { members }, &scan_phases(32)).unwrap();
    assert!(scan.fit.amplitude.abs() < 1e-12, "{}", scan.fit.amplitude);
}

#[test]
fn trap_loss_of_ground_pair_matches_closed_form() {
    let noise = NoiseModel { atom_retention: 0.989, shots: 100_000, seed: 3, ..NoiseModel::perfect() };
    let c = measure_shots(&[1.0, 0.0, 0.0, 0.0], &noise, true, 0).unwrap();
    let lost = 1.0 - c[0] as f64 / 1e5;
    let expected = 1.0 - 0.989f64.powi(2);
    let sigma = (expected * (1.0 - expected) / 1e5).sqrt();
    assert!((lost - expected).abs() < 4.0 * sigma, "{lost} vs {expected}");
}

#[test]
fn pushout_off_reads_ground_for_bright_pair() {
    let c = measure_shots(&[0.0, 0.0, 0.0, 1.0], &NoiseModel::perfect(), false, 0).unwrap();
    assert_eq!(c, [NoiseModel::perfect().shots, 0, 0, 0]);
}

#[test]
fn shot_noise_scales_as_inverse_sqrt_shots() {
    let dist = [0.5, 0.0, 0.0, 0.5];
    let sd_for = |shots: u64| {
        let xs: Vec<f64> = (0..400)
            .map(|seed| {
                let noise = NoiseModel { shots, seed, ..NoiseModel::default() };
                measure_shots(&dist, &noise, true, 0).unwrap()[3] as f64 / shots as f64
            })
            .collect();
        sample_sd(&xs)
    };
    let sd: Vec<f64> = [150, 600, 2400].iter().map(|&n| sd_for(n) * (n as f64).sqrt()).collect();
    for s in &sd[1..] {
        assert!((s / sd[0] - 1.0).abs() < 0.10, "{sd:?}");
    }
}

#[test]
fn identity_gate_stays_below_classical_bound() {
    let r = run_table1(&GateModel::Identity, &NoiseModel::default(), &ExperimentOptions::default()).unwrap();
    assert!(r.fidelity_raw <= 0.5 + 3.0 * r.fidelity_stderr, "{} +- {}", r.fidelity_raw, r.fidelity_stderr);
}

#[test]
fn ideal_gate_without_noise_is_perfect_up_to_shot_noise() {
    let r = run_table1(&GateModel::IdealCz, &NoiseModel::perfect(), &ExperimentOptions::default()).unwrap();
    assert_eq!(r.populations[1] + r.populations[2], 0.0);
    assert!((r.table.raw.population - 1.0).abs() < 1e-12);
    assert!((r.fidelity_raw - 1.0).abs() < 3.0 * r.fidelity_stderr.max(1e-3), "{}", r.fidelity_raw);
    assert!((r.state_fidelity - 1.0).abs() < 1e-12);
}

#[test]
fn report_is_reproducible() {
    let cfg = rydberg_gate::config::RunConfig::default();
    let gate = GateModel::Simulated(cfg.drive_config());
    let a = run_table1(&gate, &cfg.noise_model(), &cfg.experiment_options()).unwrap();
    let b = run_table1(&gate, &cfg.noise_model(), &cfg.experiment_options()).unwrap();
    assert_eq!(a.report(), b.report());
    assert!(a.fidelity_corrected >= a.fidelity_raw);
    let pops: f64 = a.populations.iter().sum();
    assert!((pops - 1.0).abs() < 1e-12);
    assert!((a.fidelity_raw - (0.5 * (a.populations[0] + a.populations[3]) + a.coherence)).abs() < 1e-12);
}

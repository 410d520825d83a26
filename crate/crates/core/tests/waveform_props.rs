use proptest::prelude::*;

use rydberg_gate::waveform::{
    bernstein_basis, envelope, parse_series_csv, rf_deviation, sample_envelope, to_mode, write_waveform_csv,
    DeviationMode, WaveformSpec,
};

fn spec_strategy() -> impl Strategy<Value = WaveformSpec> {
    (prop::array::uniform4(1.0f64..500.0), 8usize..=20, 0.5f64..5.0)
        .prop_map(|(beta, degree, gate_time)| WaveformSpec::new(beta, degree, gate_time).unwrap())
}

proptest! {
    #[test]
    fn basis_is_a_partition_of_unity(n in 0usize..=40, x in 0.0f64..=1.0) {
        let total: f64 = (0..=n).map(|nu| bernstein_basis(nu, n, x).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_is_mirror_symmetric_and_pinned(spec in spec_strategy(), u in 0.0f64..=1.0) {
        let t = u * spec.gate_time;
        let a = envelope(&spec, t).unwrap();
        let b = envelope(&spec, spec.gate_time - t).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        prop_assert_eq!(envelope(&spec, 0.0).unwrap(), 0.0);
        prop_assert_eq!(envelope(&spec, spec.gate_time).unwrap(), 0.0);
    }

    #[test]
    fn exported_csv_parses_back(spec in spec_strategy(), rate in 5.0f64..200.0) {
        let samples = sample_envelope(&spec, rate).unwrap();
        let mut buf = Vec::new();
        write_waveform_csv(&mut buf, &samples, DeviationMode::Amplitude).unwrap();
        let back = parse_series_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back.len(), samples.len());
        // nine significant digits in time and value bound the mismatch
        prop_assert!(rf_deviation(&back, &spec, DeviationMode::Amplitude).unwrap() < 1e-6);
    }
}

#[test]
fn corrupted_point_sets_the_deviation() {
    let spec = WaveformSpec::default();
    let mut measured = sample_envelope(&spec, 100.0).unwrap();
    let peak = spec.peak();
    measured[37].1 += 0.02 * peak;
    let d = rf_deviation(&measured, &spec, DeviationMode::Amplitude).unwrap();
    assert!((d - 0.02).abs() < 1e-12, "{d}");

    let intensity = to_mode(&sample_envelope(&spec, 100.0).unwrap(), DeviationMode::Intensity);
    assert!(rf_deviation(&intensity, &spec, DeviationMode::Intensity).unwrap() < 1e-12);
    let scaled: Vec<_> = sample_envelope(&spec, 100.0).unwrap().iter().map(|&(t, v)| (t, 1.005 * v)).collect();
    assert!((rf_deviation(&scaled, &spec, DeviationMode::Amplitude).unwrap() - 0.005).abs() < 1e-12);
}

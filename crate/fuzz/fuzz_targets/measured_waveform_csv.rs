#![no_main]

use libfuzzer_sys::fuzz_target;
use rydberg_gate::waveform::{parse_series_csv, rf_deviation, DeviationMode, WaveformSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(series) = parse_series_csv(text) else { return };
    let spec = WaveformSpec::default();
    for mode in [DeviationMode::Amplitude, DeviationMode::Intensity] {
        if let Ok(d) = rf_deviation(&series, &spec, mode) {
            assert!(d.is_finite() && d >= 0.0);
        }
    }
});

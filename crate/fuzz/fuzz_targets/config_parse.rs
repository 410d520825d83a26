#![no_main]

use libfuzzer_sys::fuzz_target;
use rydberg_gate::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // Anything accepted must survive the canonical round trip unchanged.
    if let Ok(cfg) = RunConfig::from_toml(text) {
        let canonical = cfg.to_toml();
        let back = RunConfig::from_toml(&canonical).expect("canonical form must load");
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), canonical);
    }
});

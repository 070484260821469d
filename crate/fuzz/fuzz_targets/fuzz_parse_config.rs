#![no_main]

use libfuzzer_sys::fuzz_target;

// Scenario configs come from users; parsing and validation must never panic,
// whatever the bytes. Valid configs must also survive a re-serialize/re-parse
// round trip.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(scenario) = tlqg::config::parse_config_str(text) {
        let json = scenario
            .config
            .to_json()
            .expect("valid config re-serializes");
        let again = tlqg::config::parse_config_str(&json).expect("round trip re-parses");
        assert_eq!(scenario.config, again.config);
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;

// plan.csv is read back by `tlqg simulate`; the parser must never panic and
// accepted plans must survive a render/re-parse cycle on their state and
// control columns.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = tlqg::io::parse_plan_csv(text);
});

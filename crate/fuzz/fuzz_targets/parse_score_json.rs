#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(model) = entest::io::parse_score_json(text, "fuzz") {
            assert!(model.scores().iter().all(|s| s.is_finite()));
        }
    }
});

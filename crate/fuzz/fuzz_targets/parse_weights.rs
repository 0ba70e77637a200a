#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(w) = entest::io::parse_weights(text, "fuzz") {
            assert!(w.iter().all(|x| x.is_finite() && *x > 0.0));
        }
    }
});

#![no_main]

use entest::simharness::ExperimentSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = ExperimentSpec::from_json(text, "fuzz") {
            let again = ExperimentSpec::from_json(&spec.to_json(), "fuzz").expect("round trip");
            assert_eq!(again.hash(), spec.hash());
        }
    }
});

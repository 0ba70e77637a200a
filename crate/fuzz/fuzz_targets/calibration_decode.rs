#![no_main]

use entest::reference_tests::CalibrationTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = CalibrationTable::decode(data) {
        let p = table.p_value(1.0);
        assert!(p > 0.0 && p <= 1.0);
    }
});

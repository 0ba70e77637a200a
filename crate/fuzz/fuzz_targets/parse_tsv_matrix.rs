#![no_main]

use entest::io::{parse_tsv_matrix, parse_tsv_vector, TsvOptions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&flag, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let opts = TsvOptions { header: flag & 1 == 1 };
    if let Ok(m) = parse_tsv_matrix(text, "fuzz", opts) {
        assert!(m.iter().all(|x| x.is_finite()));
    }
    let _ = parse_tsv_vector(text, "fuzz", opts);
});

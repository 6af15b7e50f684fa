#![no_main]

use libfuzzer_sys::fuzz_target;
use ttnet::format::{decode_grid, encode_grid, FloatWidth};

fuzz_target!(|data: &[u8]| {
    if let Ok(grid) = decode_grid(data) {
        let bytes = encode_grid(&grid, FloatWidth::F64);
        let again = decode_grid(&bytes).expect("re-encoded dump decodes");
        assert_eq!(encode_grid(&again, FloatWidth::F64), bytes);
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;
use ttnet::format::{decode_model, encode_model, FloatWidth};

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode_model(data) {
        // Anything accepted must survive a lossless re-encode.
        let bytes = encode_model(&model, FloatWidth::F64);
        let again = decode_model(&bytes).expect("re-encoded model decodes");
        assert_eq!(encode_model(&again, FloatWidth::F64), bytes);
    }
});

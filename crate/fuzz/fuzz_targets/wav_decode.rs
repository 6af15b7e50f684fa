#![no_main]

use libfuzzer_sys::fuzz_target;
use ttnet::format::decode_wav;

fuzz_target!(|data: &[u8]| {
    if let Ok(wave) = decode_wav(data) {
        assert!(wave.samples.iter().all(|s| (-1.0..=1.0).contains(s)));
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;
use ttnet::synth::{parse_manifest, render_manifest};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(entries) = parse_manifest(text) {
            assert_eq!(
                parse_manifest(&render_manifest(&entries)).expect("rendered manifest parses"),
                entries
            );
        }
    }
});

//! The checked-in fuzz corpus must stay decodable, or the fuzzers start
//! from nothing useful.

use std::fs;
use std::path::{Path, PathBuf};

use ttnet::config::RunConfig;
use ttnet::format::{decode_grid, decode_model, decode_wav};
use ttnet::synth::parse_manifest;

fn seeds(target: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn model_seeds_decode() {
    for p in seeds("model_decode") {
        let mut m = decode_model(&fs::read(&p).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(m.flat_params().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn dump_seeds_decode() {
    for p in seeds("ttfm_decode") {
        decode_grid(&fs::read(&p).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn wav_seeds_decode() {
    for p in seeds("wav_decode") {
        let w = decode_wav(&fs::read(&p).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(!w.samples.is_empty());
    }
}

#[test]
fn config_seeds_parse() {
    for p in seeds("config_parse") {
        RunConfig::parse(&text(&p)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn manifest_seeds_parse() {
    for p in seeds("manifest_parse") {
        let entries = parse_manifest(&text(&p)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(!entries.is_empty());
    }
}

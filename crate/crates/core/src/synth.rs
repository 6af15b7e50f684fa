//! Synthetic corpus: harmonic, syllable-modulated "speech" and three filtered
//! noise types, mixed on an SNR grid and stored as WAV triples plus feature
//! and mask dumps with a CSV manifest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::audio::{extract_features, irm_from_waveforms, mix_at_snr, GammatoneBank, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::format::{encode_grid, encode_wav_pcm, quantize, read_grid, read_wav, FloatWidth};
use crate::tensornet::Example;

pub const DEFAULT_SNRS: [f64; 6] = [-6.0, -3.0, 0.0, 3.0, 6.0, 9.0];
pub const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "id,snr_db,noise,samples,frames";
const PEAK: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    /// Leaky-integrated white noise; energy concentrated below a few hundred Hz.
    Brown,
    /// First-differenced white noise; rising toward high frequencies.
    Hiss,
    /// White noise through a two-pole resonator.
    Band,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::Brown, NoiseKind::Hiss, NoiseKind::Band];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Brown => "brown",
            NoiseKind::Hiss => "hiss",
            NoiseKind::Band => "band",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown noise type `{s}`")))
    }
}

/// Harmonic complex with vibrato, two formant resonances and a syllable-rate
/// on/off envelope.
pub fn synth_speech<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let f0 = rng.gen_range(100.0..220.0);
    let vib_rate = rng.gen_range(0.5..1.5);
    let vib_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let syl_rate = rng.gen_range(2.5..4.5);
    let syl_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let formants = [
        (rng.gen_range(400.0..800.0), 120.0),
        (rng.gen_range(1000.0..2200.0), 200.0),
    ];
    let harmonics = (5000.0 / (f0 * 1.05)) as usize;
    let amps: Vec<f64> = (1..=harmonics)
        .map(|k| {
            let f = k as f64 * f0;
            let env: f64 = formants
                .iter()
                .map(|&(fc, bw)| (-0.5 * ((f - fc) / bw).powi(2)).exp())
                .sum();
            (0.15 + env) / k as f64
        })
        .collect();
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(len);
    for n in 0..len {
        let t = n as f64 / sr;
        let inst = f0 * (1.0 + 0.05 * (std::f64::consts::TAU * vib_rate * t + vib_phase).sin());
        phase += std::f64::consts::TAU * inst / sr;
        let tone: f64 = amps
            .iter()
            .enumerate()
            .map(|(k, a)| a * (phase * (k + 1) as f64).sin())
            .sum();
        let syl = (std::f64::consts::TAU * syl_rate * t + syl_phase)
            .sin()
            .max(0.0)
            .powi(2);
        out.push(tone * syl);
    }
    out
}

pub fn synth_noise<R: Rng>(kind: NoiseKind, len: usize, rng: &mut R) -> Vec<f64> {
    let mut white = || rng.sample::<f64, _>(StandardNormal);
    let mut out = Vec::with_capacity(len);
    match kind {
        NoiseKind::Brown => {
            let (mut y, mut mean) = (0.0, 0.0);
            for _ in 0..len {
                y = 0.98 * y + white();
                mean = 0.999 * mean + 0.001 * y;
                out.push(y - mean);
            }
        }
        NoiseKind::Hiss => {
            let mut prev = 0.0;
            for _ in 0..len {
                let w = white();
                out.push(w - 0.9 * prev);
                prev = w;
            }
        }
        NoiseKind::Band => {
            let fc: f64 = 500.0 + 2500.0 * (white().abs().min(3.0) / 3.0);
            let r: f64 = 0.98;
            let a1 = 2.0 * r * (std::f64::consts::TAU * fc / SAMPLE_RATE as f64).cos();
            let a2 = -r * r;
            let (mut y1, mut y2) = (0.0, 0.0);
            for _ in 0..len {
                let y = white() + a1 * y1 + a2 * y2;
                y2 = y1;
                y1 = y;
                out.push(y);
            }
        }
    }
    out
}

/// One mixture in 16-bit form; `noisy[n] == clean[n] + noise[n]` exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthUtterance {
    pub id: String,
    pub snr_db: f64,
    pub noise_kind: NoiseKind,
    pub clean: Vec<i16>,
    pub noise: Vec<i16>,
    pub noisy: Vec<i16>,
}

fn pcm_wave(pcm: &[i16]) -> Result<Waveform> {
    Waveform::new(pcm.iter().map(|&v| v as f64 / 32768.0).collect(), SAMPLE_RATE)
}

impl SynthUtterance {
    pub fn clean_wave(&self) -> Result<Waveform> {
        pcm_wave(&self.clean)
    }

    pub fn noise_wave(&self) -> Result<Waveform> {
        pcm_wave(&self.noise)
    }

    pub fn noisy_wave(&self) -> Result<Waveform> {
        pcm_wave(&self.noisy)
    }
}

/// Generates `count` mixtures cycling through `snrs` and the noise types.
pub fn generate(count: usize, snrs: &[f64], seconds: f64, seed: u64) -> Result<Vec<SynthUtterance>> {
    if snrs.is_empty() {
        return Err(Error::Invalid("SNR list is empty".into()));
    }
    if let Some(bad) = snrs.iter().find(|s| !s.is_finite()) {
        return Err(Error::Invalid(format!("SNR {bad} is not finite")));
    }
    let len = (seconds * SAMPLE_RATE as f64).round() as usize;
    if len < crate::audio::WINDOW || !seconds.is_finite() {
        return Err(Error::Invalid(format!(
            "utterance length {seconds} s is shorter than one frame"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for u in 0..count {
        let snr_db = snrs[u % snrs.len()];
        let noise_kind = NoiseKind::ALL[(u / snrs.len()) % NoiseKind::ALL.len()];
        let mut urng = ChaCha8Rng::seed_from_u64(rng.gen());
        let clean = Waveform::new(synth_speech(len, &mut urng), SAMPLE_RATE)?;
        let noise = Waveform::new(
            synth_noise(noise_kind, len + SAMPLE_RATE as usize / 10, &mut urng),
            SAMPLE_RATE,
        )?;
        let (noisy, scaled) = mix_at_snr(&clean, &noise, snr_db, &mut urng)?;
        let peak = [&clean.samples, &scaled.samples, &noisy.samples]
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let gain = PEAK / peak;
        let clean: Vec<i16> = clean.samples.iter().map(|&v| quantize(v * gain)).collect();
        let noise: Vec<i16> = scaled.samples.iter().map(|&v| quantize(v * gain)).collect();
        let noisy = clean.iter().zip(&noise).map(|(&c, &n)| c.saturating_add(n)).collect();
        out.push(SynthUtterance {
            id: format!("utt{u:04}"),
            snr_db,
            noise_kind,
            clean,
            noise,
            noisy,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub snr_db: f64,
    pub noise_kind: NoiseKind,
    pub samples: usize,
    pub frames: usize,
}

impl ManifestEntry {
    pub fn path(&self, dir: &Path, suffix: &str) -> PathBuf {
        dir.join(format!("{}_{}", self.id, suffix))
    }
}

pub fn render_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            e.id, e.snr_db, e.noise_kind, e.samples, e.frames
        ));
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let bad = |line: usize, reason: String| Error::Config { line, reason };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
        _ => return Err(bad(1, format!("manifest header must be `{MANIFEST_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.trim_end().split(',').collect();
        if fields.len() != 5 {
            return Err(bad(line, format!("expected 5 fields, found {}", fields.len())));
        }
        let id = fields[0];
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(bad(line, format!("invalid utterance id `{id}`")));
        }
        let snr_db: f64 = fields[1]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| bad(line, format!("invalid SNR `{}`", fields[1])))?;
        let noise_kind = fields[2].parse().map_err(|e: Error| bad(line, e.to_string()))?;
        let samples = fields[3]
            .parse()
            .map_err(|_| bad(line, format!("invalid sample count `{}`", fields[3])))?;
        let frames = fields[4]
            .parse()
            .map_err(|_| bad(line, format!("invalid frame count `{}`", fields[4])))?;
        out.push(ManifestEntry {
            id: id.to_string(),
            snr_db,
            noise_kind,
            samples,
            frames,
        });
    }
    Ok(out)
}

/// Writes WAV triples, feature and mask dumps and the manifest into `dir`.
pub fn write_dataset(dir: &Path, utterances: &[SynthUtterance], bank: &GammatoneBank) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(utterances.len());
    for u in utterances {
        let noisy = u.noisy_wave()?;
        let features = extract_features(bank, &noisy)?;
        let mask = irm_from_waveforms(bank, &u.clean_wave()?, &u.noise_wave()?)?;
        let entry = ManifestEntry {
            id: u.id.clone(),
            snr_db: u.snr_db,
            noise_kind: u.noise_kind,
            samples: u.clean.len(),
            frames: features.rows(),
        };
        std::fs::write(entry.path(dir, "clean.wav"), encode_wav_pcm(&u.clean)?)?;
        std::fs::write(entry.path(dir, "noise.wav"), encode_wav_pcm(&u.noise)?)?;
        std::fs::write(entry.path(dir, "noisy.wav"), encode_wav_pcm(&u.noisy)?)?;
        std::fs::write(
            entry.path(dir, "features.ttfm"),
            encode_grid(&features, FloatWidth::F64),
        )?;
        std::fs::write(entry.path(dir, "mask.ttfm"), encode_grid(&mask, FloatWidth::F64))?;
        entries.push(entry);
    }
    std::fs::write(dir.join(MANIFEST), render_manifest(&entries))?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text =
        std::fs::read_to_string(&path).map_err(|e| Error::Invalid(format!("cannot read {}: {}", path.display(), e)))?;
    parse_manifest(&text)
}

/// Loads the feature/mask pairs listed in a dataset directory.
pub fn load_examples(dir: &Path) -> Result<Vec<(ManifestEntry, Example)>> {
    let mut out = Vec::new();
    for entry in read_manifest(dir)? {
        let features = read_grid(&entry.path(dir, "features.ttfm"))?;
        let target = read_grid(&entry.path(dir, "mask.ttfm"))?;
        if features.rows() != entry.frames || target.rows() != entry.frames {
            return Err(Error::Shape(format!(
                "{}: manifest lists {} frames, dumps have {} and {}",
                entry.id,
                entry.frames,
                features.rows(),
                target.rows()
            )));
        }
        out.push((entry, Example { features, target }));
    }
    Ok(out)
}

/// Clean and noisy waveforms for one manifest entry.
pub fn load_waves(dir: &Path, entry: &ManifestEntry) -> Result<(Waveform, Waveform)> {
    Ok((
        read_wav(&entry.path(dir, "clean.wav"))?,
        read_wav(&entry.path(dir, "noisy.wav"))?,
    ))
}

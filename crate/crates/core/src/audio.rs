//! Auditory front-end: ERB-spaced gammatone filterbank, cochleagrams, MRCG
//! features with deltas, ideal ratio masks, SNR mixing, mask-based
//! resynthesis and segmental SNR.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const SAMPLE_RATE: u32 = 16_000;
pub const CHANNELS: usize = 64;
pub const LOW_HZ: f64 = 50.0;
pub const HIGH_HZ: f64 = 8_000.0;
/// 20 ms analysis window.
pub const WINDOW: usize = 320;
/// 10 ms hop (50% overlap).
pub const HOP: usize = 160;
/// 200 ms window of the second MRCG stream.
pub const LONG_WINDOW: usize = 3_200;
pub const FIR_TAPS: usize = 2_048;
pub const MRCG_WIDTH: usize = 4 * CHANNELS;
pub const FEATURE_WIDTH: usize = 3 * MRCG_WIDTH;
pub const IRM_BETA: f64 = 0.5;
const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::UnsupportedAudio(format!(
                "sample rate {sample_rate} Hz, expected {SAMPLE_RATE} Hz"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("waveform samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// ERB-rate in Cams: `21.4 log10(1 + 0.00437 f)`.
pub fn erb_rate(hz: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * hz).log10()
}

pub fn erb_rate_to_hz(cams: f64) -> f64 {
    (10f64.powf(cams / 21.4) - 1.0) / 0.00437
}

/// Equivalent rectangular bandwidth in Hz.
pub fn erb_bandwidth(hz: f64) -> f64 {
    24.7 * (4.37 * hz / 1000.0 + 1.0)
}

/// `n` center frequencies equally spaced on the ERB-rate scale from `lo` to `hi`.
pub fn erb_center_frequencies(n: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if n < 2 || !(lo > 0.0 && lo < hi) {
        return Err(Error::Invalid(format!(
            "need n >= 2 and 0 < lo < hi, got n={n} lo={lo} hi={hi}"
        )));
    }
    let (e0, e1) = (erb_rate(lo), erb_rate(hi));
    let mut cf: Vec<f64> = (0..n)
        .map(|k| erb_rate_to_hz(e0 + (e1 - e0) * k as f64 / (n - 1) as f64))
        .collect();
    cf[0] = lo;
    cf[n - 1] = hi;
    Ok(cf)
}

/// FIR-truncated 4th-order gammatone filterbank.
#[derive(Clone, Debug)]
pub struct GammatoneBank {
    center_freqs: Vec<f64>,
    impulse: Vec<Vec<f64>>,
    /// Sample index of each impulse response's largest positive value.
    lags: Vec<usize>,
}

impl GammatoneBank {
    pub fn new() -> Self {
        Self::with_channels(CHANNELS, LOW_HZ, HIGH_HZ).expect("default bank parameters are valid")
    }

    pub fn with_channels(n: usize, lo: f64, hi: f64) -> Result<Self> {
        let center_freqs = erb_center_frequencies(n, lo, hi)?;
        let fs = SAMPLE_RATE as f64;
        let mut impulse = Vec::with_capacity(n);
        let mut lags = Vec::with_capacity(n);
        for &cf in &center_freqs {
            let b = 2.0 * PI * 1.019 * erb_bandwidth(cf);
            let mut g: Vec<f64> = (0..FIR_TAPS)
                .map(|i| {
                    let t = i as f64 / fs;
                    t.powi(3) * (-b * t).exp() * (2.0 * PI * cf * t).cos()
                })
                .collect();
            // Unit gain at the center frequency.
            let w = 2.0 * PI * cf / fs;
            let (re, im) = g.iter().enumerate().fold((0.0, 0.0), |(re, im), (i, &v)| {
                (re + v * (w * i as f64).cos(), im - v * (w * i as f64).sin())
            });
            let gain = re.hypot(im);
            for v in &mut g {
                *v /= gain;
            }
            let lag = g
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            impulse.push(g);
            lags.push(lag);
        }
        Ok(Self {
            center_freqs,
            impulse,
            lags,
        })
    }

    pub fn center_freqs(&self) -> &[f64] {
        &self.center_freqs
    }

    pub fn impulse_responses(&self) -> &[Vec<f64>] {
        &self.impulse
    }

    pub fn lags(&self) -> &[usize] {
        &self.lags
    }

    pub fn channels(&self) -> usize {
        self.center_freqs.len()
    }

    /// Causal filtering of `wave` through every channel; each output has the
    /// input's length.
    pub fn analyze(&self, wave: &Waveform) -> Vec<Vec<f64>> {
        self.filter(&wave.samples, wave.len())
    }

    /// Filter `x` and keep the first `out_len` output samples (`x` is zero-extended).
    fn filter(&self, x: &[f64], out_len: usize) -> Vec<Vec<f64>> {
        if out_len == 0 {
            return vec![Vec::new(); self.channels()];
        }
        let n_fft = (x.len().max(out_len) + FIR_TAPS - 1).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n_fft);
        let inv = planner.plan_fft_inverse(n_fft);
        let spectrum = |sig: &[f64], fft: &Arc<dyn Fft<f64>>| {
            let mut buf: Vec<Complex<f64>> = sig.iter().map(|&v| Complex::new(v, 0.0)).collect();
            buf.resize(n_fft, Complex::new(0.0, 0.0));
            fft.process(&mut buf);
            buf
        };
        let xs = spectrum(x, &fwd);
        let norm = 1.0 / n_fft as f64;
        self.impulse
            .iter()
            .map(|g| {
                let gs = spectrum(g, &fwd);
                let mut y: Vec<Complex<f64>> = xs.iter().zip(&gs).map(|(a, b)| a * b).collect();
                inv.process(&mut y);
                y[..out_len].iter().map(|c| c.re * norm).collect()
            })
            .collect()
    }
}

impl Default for GammatoneBank {
    fn default() -> Self {
        Self::new()
    }
}

/// Number of frames of a `len`-sample signal: `floor((len - win) / hop) + 1`.
pub fn frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len < win {
        0
    } else {
        (len - win) / hop + 1
    }
}

/// Per-frame channel energies, stored `channels x frames`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cochleagram {
    pub energies: Grid,
    pub window: usize,
    pub hop: usize,
}

impl Cochleagram {
    pub fn channels(&self) -> usize {
        self.energies.rows()
    }

    pub fn frames(&self) -> usize {
        self.energies.cols()
    }
}

/// Sum of squares of each channel within each window.
pub fn cochleagram(channels: &[Vec<f64>], win: usize, hop: usize) -> Result<Cochleagram> {
    let len = channels.first().map_or(0, |c| c.len());
    if win == 0 || hop == 0 {
        return Err(Error::Invalid("window and hop must be positive".into()));
    }
    if len < win {
        return Err(Error::TooShort {
            needed: win,
            actual: len,
        });
    }
    let frames = frame_count(len, win, hop);
    let energies = Grid::from_fn(channels.len(), frames, |k, t| {
        channels[k][t * hop..t * hop + win].iter().map(|v| v * v).sum()
    });
    Ok(Cochleagram {
        energies,
        window: win,
        hop,
    })
}

/// Energies over a window of `win` samples centered on each short frame.
fn centered_energies(channels: &[Vec<f64>], frames: usize, win: usize) -> Grid {
    let len = channels.first().map_or(0, |c| c.len());
    Grid::from_fn(channels.len(), frames, |k, t| {
        let center = t * HOP + WINDOW / 2;
        let start = center.saturating_sub(win / 2);
        let end = (center + win / 2).min(len);
        channels[k][start..end].iter().map(|v| v * v).sum()
    })
}

/// Mean over a `(2 r + 1) x (2 r + 1)` neighbourhood, truncated at the edges.
pub fn box_smooth(g: &Grid, radius: usize) -> Grid {
    Grid::from_fn(g.rows(), g.cols(), |r, c| {
        let (r0, r1) = (r.saturating_sub(radius), (r + radius).min(g.rows() - 1));
        let (c0, c1) = (c.saturating_sub(radius), (c + radius).min(g.cols() - 1));
        let mut sum = 0.0;
        for rr in r0..=r1 {
            for cc in c0..=c1 {
                sum += g.get(rr, cc);
            }
        }
        sum / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64
    })
}

fn log_compress(g: &Grid) -> Grid {
    Grid::from_fn(g.rows(), g.cols(), |r, c| (g.get(r, c) + LOG_FLOOR).ln())
}

/// Multi-resolution cochleagram, `T x 256`: per frame the 20 ms log
/// cochleagram, the centered 200 ms log cochleagram, and 11x11 and 23x23
/// box-smoothed versions of the first.
pub fn mrcg_features(bank: &GammatoneBank, wave: &Waveform) -> Result<Grid> {
    let channels = bank.analyze(wave);
    mrcg_from_channels(&channels)
}

pub fn mrcg_from_channels(channels: &[Vec<f64>]) -> Result<Grid> {
    let cg = cochleagram(channels, WINDOW, HOP)?;
    let cg1 = log_compress(&cg.energies);
    let cg2 = log_compress(&centered_energies(channels, cg.frames(), LONG_WINDOW));
    let cg3 = box_smooth(&cg1, 5);
    let cg4 = box_smooth(&cg1, 11);
    let n = channels.len();
    Ok(Grid::from_fn(cg.frames(), 4 * n, |t, c| {
        let k = c % n;
        match c / n {
            0 => cg1.get(k, t),
            1 => cg2.get(k, t),
            2 => cg3.get(k, t),
            _ => cg4.get(k, t),
        }
    }))
}

/// Appends regression deltas (window +-2, edge-replicated) and deltas of the
/// deltas: `T x W -> T x 3W`.
pub fn add_deltas(features: &Grid) -> Result<Grid> {
    if features.rows() < 5 {
        return Err(Error::TooShort {
            needed: 5,
            actual: features.rows(),
        });
    }
    let d1 = deltas(features);
    let d2 = deltas(&d1);
    let w = features.cols();
    Ok(Grid::from_fn(features.rows(), 3 * w, |t, c| match c / w {
        0 => features.get(t, c),
        1 => d1.get(t, c - w),
        _ => d2.get(t, c - 2 * w),
    }))
}

fn deltas(x: &Grid) -> Grid {
    let last = x.rows() as isize - 1;
    let at = |t: isize, c: usize| x.get(t.clamp(0, last) as usize, c);
    Grid::from_fn(x.rows(), x.cols(), |t, c| {
        let t = t as isize;
        (1..=2).map(|n| n as f64 * (at(t + n, c) - at(t - n, c))).sum::<f64>() / 10.0
    })
}

/// Full 768-wide feature extraction.
pub fn extract_features(bank: &GammatoneBank, wave: &Waveform) -> Result<Grid> {
    add_deltas(&mrcg_features(bank, wave)?)
}

/// `(S^2 / (S^2 + W^2))^beta` per T-F unit, as a `T x channels` mask. Units
/// with no energy in either signal are 0.
pub fn ideal_ratio_mask(clean: &Cochleagram, noise: &Cochleagram, beta: f64) -> Result<Grid> {
    let (s, w) = (&clean.energies, &noise.energies);
    if s.rows() != w.rows() || s.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "clean cochleagram is {}x{}, noise is {}x{}",
            s.rows(),
            s.cols(),
            w.rows(),
            w.cols()
        )));
    }
    if s.data().iter().chain(w.data()).any(|&v| v < 0.0) {
        return Err(Error::Invalid("energies must be non-negative".into()));
    }
    Ok(Grid::from_fn(s.cols(), s.rows(), |t, k| {
        irm_unit(s.get(k, t), w.get(k, t), beta)
    }))
}

#[inline]
pub fn irm_unit(speech: f64, noise: f64, beta: f64) -> f64 {
    let total = speech + noise;
    if total == 0.0 {
        0.0
    } else {
        (speech / total).powf(beta)
    }
}

/// IRM target for a clean/noise pair at the 20 ms resolution.
pub fn irm_from_waveforms(bank: &GammatoneBank, clean: &Waveform, noise: &Waveform) -> Result<Grid> {
    let s = cochleagram(&bank.analyze(clean), WINDOW, HOP)?;
    let w = cochleagram(&bank.analyze(noise), WINDOW, HOP)?;
    ideal_ratio_mask(&s, &w, IRM_BETA)
}

pub fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Crops `noise` at a random offset to the clean length and scales it so the
/// full-utterance power ratio is `snr_db`. Returns `(noisy, scaled_noise)`.
pub fn mix_at_snr<R: Rng>(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<(Waveform, Waveform)> {
    if noise.len() < clean.len() {
        return Err(Error::TooShort {
            needed: clean.len(),
            actual: noise.len(),
        });
    }
    let offset = rng.gen_range(0..=noise.len() - clean.len());
    let segment = &noise.samples[offset..offset + clean.len()];
    let (pc, pn) = (mean_square(&clean.samples), mean_square(segment));
    if pc == 0.0 {
        return Err(Error::Silent("clean signal has zero power".into()));
    }
    if pn == 0.0 {
        return Err(Error::Silent("noise segment has zero power".into()));
    }
    let scale = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = segment.iter().map(|v| v * scale).collect();
    let noisy = clean.samples.iter().zip(&scaled).map(|(a, b)| a + b).collect();
    Ok((Waveform::new(noisy, SAMPLE_RATE)?, Waveform::new(scaled, SAMPLE_RATE)?))
}

/// Weights every channel of `noisy` by its per-frame mask gain (linearly
/// interpolated between frame centers), aligns channels by their impulse
/// response peak lag and sums them.
pub fn apply_mask_resynthesize(noisy: &Waveform, mask: &Grid, bank: &GammatoneBank) -> Result<Waveform> {
    let n = noisy.len();
    let frames = frame_count(n, WINDOW, HOP);
    if mask.rows() != frames || mask.cols() != bank.channels() {
        return Err(Error::Shape(format!(
            "mask is {}x{}, signal has {} frames of {} channels",
            mask.rows(),
            mask.cols(),
            frames,
            bank.channels()
        )));
    }
    if frames == 0 {
        return Err(Error::TooShort {
            needed: WINDOW,
            actual: n,
        });
    }
    let max_lag = bank.lags.iter().copied().max().unwrap_or(0);
    let channels = bank.filter(&noisy.samples, n + max_lag);
    let mut out = vec![0.0; n];
    for (k, ch) in channels.iter().enumerate() {
        let lag = bank.lags[k];
        for (i, o) in out.iter_mut().enumerate() {
            *o += frame_gain(mask, k, i) * ch[i + lag];
        }
    }
    let scale = bank.synthesis_scale();
    for v in &mut out {
        *v *= scale;
    }
    Waveform::new(out, SAMPLE_RATE)
}

impl GammatoneBank {
    /// Least-squares scale for the aligned channel sum on white input:
    /// `s[0] / sum_n s[n]^2` with `s[n] = sum_k g_k[n + lag_k]`.
    fn synthesis_scale(&self) -> f64 {
        let max_lag = self.lags.iter().copied().max().unwrap_or(0);
        let mut s = vec![0.0; FIR_TAPS + max_lag];
        for (g, &lag) in self.impulse.iter().zip(&self.lags) {
            // s index m corresponds to n = m - max_lag.
            for (i, &v) in g.iter().enumerate() {
                s[i + max_lag - lag] += v;
            }
        }
        let energy: f64 = s.iter().map(|v| v * v).sum();
        s[max_lag] / energy
    }
}

/// Mask gain of channel `k` at sample `i`: frame `t` sits at sample
/// `t * HOP + WINDOW / 2`.
fn frame_gain(mask: &Grid, k: usize, i: usize) -> f64 {
    let first = WINDOW / 2;
    if i <= first {
        return mask.get(0, k);
    }
    let pos = (i - first) as f64 / HOP as f64;
    let t = pos.floor() as usize;
    if t + 1 >= mask.rows() {
        return mask.get(mask.rows() - 1, k);
    }
    let frac = pos - t as f64;
    mask.get(t, k) * (1.0 - frac) + mask.get(t + 1, k) * frac
}

/// Mean per-frame SNR in dB, each frame clamped to `[-10, 35]`; frames where
/// the reference is silent are skipped.
pub fn segmental_snr(reference: &[f64], processed: &[f64], frame: usize, hop: usize) -> Result<f64> {
    if reference.len() != processed.len() {
        return Err(Error::InputLength {
            expected: reference.len(),
            actual: processed.len(),
        });
    }
    if frame == 0 || hop == 0 {
        return Err(Error::Invalid("frame and hop must be positive".into()));
    }
    let frames = frame_count(reference.len(), frame, hop);
    let mut total = 0.0;
    let mut counted = 0usize;
    for t in 0..frames {
        let r = &reference[t * hop..t * hop + frame];
        let p = &processed[t * hop..t * hop + frame];
        let sig: f64 = r.iter().map(|v| v * v).sum();
        if sig == 0.0 {
            continue;
        }
        let err: f64 = r.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
        let snr = if err == 0.0 {
            35.0
        } else {
            (10.0 * (sig / err).log10()).clamp(-10.0, 35.0)
        };
        total += snr;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Silent("every reference frame is silent".into()));
    }
    Ok(total / counted as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tone(freq: f64, len: usize) -> Waveform {
        let s = (0..len)
            .map(|i| (2.0 * PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        Waveform::new(s, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn erb_endpoints_and_value() {
        let cf = erb_center_frequencies(64, 50.0, 8000.0).unwrap();
        assert_eq!(cf.len(), 64);
        assert_eq!(cf[0], 50.0);
        assert_eq!(cf[63], 8000.0);
        assert!((erb_rate(1000.0) - 21.4 * 5.37f64.log10()).abs() < 1e-12);
        assert!((erb_rate(1000.0) - 15.62).abs() < 0.01);
        assert!(cf.windows(2).all(|w| w[1] > w[0]));
        // Uniform spacing on the ERB-rate axis.
        let steps: Vec<f64> = cf.windows(2).map(|w| erb_rate(w[1]) - erb_rate(w[0])).collect();
        assert!(steps.iter().all(|s| (s - steps[0]).abs() < 1e-9));
    }

    #[test]
    fn erb_rejects_bad_ranges() {
        assert!(erb_center_frequencies(1, 50.0, 8000.0).is_err());
        assert!(erb_center_frequencies(8, 100.0, 50.0).is_err());
        assert!(erb_center_frequencies(8, 0.0, 50.0).is_err());
    }

    #[test]
    fn rejects_other_sample_rates() {
        assert!(matches!(
            Waveform::new(vec![0.0], 8000),
            Err(Error::UnsupportedAudio(_))
        ));
    }

    #[test]
    fn zero_input_zero_output() {
        let bank = GammatoneBank::new();
        let out = bank.analyze(&Waveform::new(vec![0.0; 1000], SAMPLE_RATE).unwrap());
        assert_eq!(out.len(), 64);
        assert!(out.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_arithmetic() {
        assert_eq!(frame_count(16_000, WINDOW, HOP), 99);
        assert_eq!(frame_count(320, WINDOW, HOP), 1);
        assert_eq!(frame_count(319, WINDOW, HOP), 0);
        assert_eq!(frame_count(479, WINDOW, HOP), 1);
        assert_eq!(frame_count(480, WINDOW, HOP), 2);
    }

    #[test]
    fn cochleagram_single_frame() {
        let ch = vec![vec![0.0; 400], (0..400).map(|i| (i as f64 * 0.37).sin()).collect()];
        let cg = cochleagram(&ch, 320, 160).unwrap();
        assert_eq!(cg.frames(), 1);
        assert_eq!(cg.energies.get(0, 0), 0.0);
        let direct: f64 = ch[1][..320].iter().map(|v| v * v).sum();
        assert!((cg.energies.get(1, 0) - direct).abs() < 1e-12);
        assert!(cochleagram(&[vec![0.0; 100]], 320, 160).is_err());
    }

    #[test]
    fn deltas_of_constant_and_ramp() {
        let c = Grid::from_fn(7, 3, |_, _| 2.5);
        let d = add_deltas(&c).unwrap();
        assert_eq!(d.cols(), 9);
        for t in 0..7 {
            for k in 3..9 {
                assert_eq!(d.get(t, k), 0.0);
            }
        }
        let ramp = Grid::from_fn(9, 1, |t, _| t as f64);
        let d = add_deltas(&ramp).unwrap();
        for t in 2..7 {
            assert!((d.get(t, 1) - 1.0).abs() < 1e-15);
        }
        assert!(add_deltas(&Grid::zeros(4, 2)).is_err());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn deltas_match_loop_formula() {
        let x = Grid::from_fn(7, 2, |t, c| ((t * 7 + c * 3) as f64 * 1.3).sin());
        let d = add_deltas(&x).unwrap();
        let clamp = |t: i64| t.clamp(0, 6) as usize;
        let mut delta = [[0.0; 2]; 7];
        for t in 0..7i64 {
            for c in 0..2 {
                let mut num = 0.0;
                for n in 1..=2i64 {
                    num += n as f64 * (x.get(clamp(t + n), c) - x.get(clamp(t - n), c));
                }
                delta[t as usize][c] = num / (2.0 * (1.0 + 4.0));
            }
        }
        for t in 0..7i64 {
            for c in 0..2 {
                assert!((d.get(t as usize, 2 + c) - delta[t as usize][c]).abs() < 1e-14);
                let mut num = 0.0;
                for n in 1..=2i64 {
                    num += n as f64 * (delta[clamp(t + n)][c] - delta[clamp(t - n)][c]);
                }
                assert!((d.get(t as usize, 4 + c) - num / 10.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn irm_closed_forms() {
        assert_eq!(irm_unit(1.0, 0.0, 0.5), 1.0);
        assert!((irm_unit(2.0, 2.0, 0.5) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((irm_unit(1.0, 3.0, 0.5) - 0.5).abs() < 1e-15);
        assert_eq!(irm_unit(0.0, 0.0, 0.5), 0.0);
        for (s, w) in [(0.3, 1.7), (5.0, 0.01), (1e-9, 2.0)] {
            let sq = irm_unit(s, w, 1.0);
            assert!((irm_unit(s, w, 0.5) - sq.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn irm_shape_mismatch() {
        let a = Cochleagram {
            energies: Grid::zeros(4, 3),
            window: WINDOW,
            hop: HOP,
        };
        let b = Cochleagram {
            energies: Grid::zeros(4, 2),
            window: WINDOW,
            hop: HOP,
        };
        assert!(ideal_ratio_mask(&a, &b, 0.5).is_err());
        let m = ideal_ratio_mask(&a, &a, 0.5).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 4));
    }

    #[test]
    fn snr_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let clean = tone(440.0, 1000);
        let noise = tone(1234.0, 1000);
        let (_, scaled) = mix_at_snr(&clean, &noise, 0.0, &mut rng).unwrap();
        let ratio: Vec<f64> = scaled.samples.iter().zip(&noise.samples).map(|(a, b)| a / b).collect();
        let s0 = ratio.iter().find(|r| r.is_finite()).copied().unwrap();
        let pc = mean_square(&clean.samples);
        let pn = mean_square(&noise.samples);
        assert!((s0 - (pc / pn).sqrt()).abs() < 1e-12);
        let (_, scaled) = mix_at_snr(&clean, &clean, 20.0, &mut rng).unwrap();
        assert!((scaled.samples[5] / clean.samples[5] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn silent_clean_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let silent = Waveform::new(vec![0.0; 100], SAMPLE_RATE).unwrap();
        assert!(matches!(
            mix_at_snr(&silent, &tone(300.0, 200), 0.0, &mut rng),
            Err(Error::Silent(_))
        ));
        assert!(mix_at_snr(&tone(300.0, 200), &tone(300.0, 100), 0.0, &mut rng).is_err());
    }

    #[test]
    fn segsnr_closed_forms() {
        let r: Vec<f64> = (0..1600).map(|i| (i as f64 * 0.05).sin() + 0.1).collect();
        assert_eq!(segmental_snr(&r, &r, 320, 160).unwrap(), 35.0);
        assert!(segmental_snr(&r, &vec![0.0; 1600], 320, 160).unwrap().abs() < 1e-12);
        assert!(segmental_snr(&vec![0.0; 1600], &r, 320, 160).is_err());
        assert!(segmental_snr(&r, &r[..100], 320, 160).is_err());
    }

    #[test]
    fn segsnr_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r: Vec<f64> = (0..2000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p: Vec<f64> = r.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
        let mut acc = Vec::new();
        let mut start = 0;
        while start + 320 <= 2000 {
            let mut s = 0.0;
            let mut e = 0.0;
            for i in start..start + 320 {
                s += r[i] * r[i];
                e += (r[i] - p[i]) * (r[i] - p[i]);
            }
            acc.push((10.0 * (s / e).log10()).clamp(-10.0, 35.0));
            start += 160;
        }
        let expected = acc.iter().sum::<f64>() / acc.len() as f64;
        assert!((segmental_snr(&r, &p, 320, 160).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_mask_gives_silence() {
        let bank = GammatoneBank::new();
        let w = tone(500.0, 3200);
        let frames = frame_count(3200, WINDOW, HOP);
        let out = apply_mask_resynthesize(&w, &Grid::zeros(frames, 64), &bank).unwrap();
        assert_eq!(out.len(), 3200);
        assert!(out.samples.iter().all(|&v| v == 0.0));
        assert!(apply_mask_resynthesize(&w, &Grid::zeros(frames + 1, 64), &bank).is_err());
    }

    #[test]
    fn box_smooth_brute_force() {
        let g = Grid::from_fn(9, 13, |r, c| ((r * 13 + c) as f64 * 0.77).cos());
        let s = box_smooth(&g, 2);
        let (r, c) = (4, 6);
        let mut sum = 0.0;
        for rr in r - 2..=r + 2 {
            for cc in c - 2..=c + 2 {
                sum += g.get(rr, cc);
            }
        }
        assert!((s.get(r, c) - sum / 25.0).abs() < 1e-14);
        // Corner uses the truncated 3x3 block.
        let mut corner = 0.0;
        for rr in 0..3 {
            for cc in 0..3 {
                corner += g.get(rr, cc);
            }
        }
        assert!((s.get(0, 0) - corner / 9.0).abs() < 1e-14);
    }
}

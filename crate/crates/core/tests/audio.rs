use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ttnet::audio::*;
use ttnet::synth::{generate, NoiseKind};
use ttnet::{Error, Grid};

fn wave(samples: Vec<f64>) -> Waveform {
    Waveform::new(samples, SAMPLE_RATE).unwrap()
}

fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn cg(values: &[f64]) -> Cochleagram {
    Cochleagram {
        energies: Grid::from_vec(values.len(), 1, values.to_vec()).unwrap(),
        window: WINDOW,
        hop: HOP,
    }
}

#[test]
fn erb_scale_values() {
    let cf = erb_center_frequencies(CHANNELS, 50.0, 8000.0).unwrap();
    assert_eq!(cf.len(), 64);
    assert_eq!(cf[0], 50.0);
    assert_eq!(cf[63], 8000.0);
    assert!(cf.windows(2).all(|w| w[1] > w[0]));
    assert!((erb_rate(1000.0) - 21.4 * 5.37f64.log10()).abs() < 1e-12);
    assert!((erb_rate(1000.0) - 15.62).abs() < 5e-3);
    // Equal steps on the ERB-rate axis.
    let step = (erb_rate(8000.0) - erb_rate(50.0)) / 63.0;
    for w in cf.windows(2) {
        assert!((erb_rate(w[1]) - erb_rate(w[0]) - step).abs() < 1e-9);
    }
    assert_eq!(GammatoneBank::new().center_freqs(), &cf[..]);
    assert!(erb_center_frequencies(1, 50.0, 8000.0).is_err());
    assert!(erb_center_frequencies(8, 900.0, 100.0).is_err());
    assert!(erb_center_frequencies(8, 0.0, 100.0).is_err());
}

#[test]
fn waveforms_must_be_finite_at_sixteen_khz() {
    assert!(Waveform::new(vec![0.0; 10], 8000).is_err());
    assert!(Waveform::new(vec![0.0, f64::NAN], SAMPLE_RATE).is_err());
    assert!(Waveform::new(vec![0.0, 0.5], SAMPLE_RATE).is_ok());
}

#[test]
fn filterbank_zero_in_zero_out() {
    let bank = GammatoneBank::new();
    let out = bank.analyze(&wave(vec![0.0; 1000]));
    assert_eq!(out.len(), 64);
    assert!(out.iter().all(|ch| ch.len() == 1000 && ch.iter().all(|&v| v == 0.0)));
}

#[test]
fn pure_tone_peaks_in_its_own_channel() {
    let bank = GammatoneBank::new();
    let len = 8000;
    for (k, &f) in bank.center_freqs().iter().enumerate() {
        let x: Vec<f64> = (0..len).map(|i| (2.0 * PI * f * i as f64 / 16000.0).cos()).collect();
        let out = bank.analyze(&wave(x));
        // Steady state only: the longest response is 2048 taps.
        let level: Vec<f64> = out.iter().map(|ch| rms(&ch[len / 2..])).collect();
        let best = (0..64).max_by(|&a, &b| level[a].total_cmp(&level[b])).unwrap();
        assert_eq!(best, k, "tone at {f:.1} Hz peaks in channel {best}");
    }
}

#[test]
fn filterbank_is_linear_and_shift_invariant() {
    let bank = GammatoneBank::new();
    let (x, y) = (noise(3000, 1), noise(3000, 2));
    let (a, b) = (0.7, -1.9);
    let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
    let (fx, fy, fm) = (
        bank.analyze(&wave(x.clone())),
        bank.analyze(&wave(y)),
        bank.analyze(&wave(mix)),
    );
    let mut worst: f64 = 0.0;
    for k in 0..64 {
        let expected: Vec<f64> = fx[k].iter().zip(&fy[k]).map(|(u, v)| a * u + b * v).collect();
        worst = worst.max(max_abs_diff(&fm[k], &expected));
    }
    assert!(worst <= 1e-10, "linearity {worst:e}");

    for shift in [1, 37, 400] {
        let mut shifted = vec![0.0; shift];
        shifted.extend(&x);
        let fs = bank.analyze(&wave(shifted));
        let mut worst: f64 = 0.0;
        for k in 0..64 {
            assert!(fs[k][..shift].iter().all(|v| v.abs() <= 1e-10));
            worst = worst.max(max_abs_diff(&fs[k][shift..], &fx[k]));
        }
        assert!(worst <= 1e-10, "shift {shift}: {worst:e}");
    }
}

#[test]
fn cochleagram_frames_and_energies() {
    assert_eq!(frame_count(16_000, 320, 160), 99);
    for len in 320..1500 {
        assert_eq!(frame_count(len, 320, 160), (len - 320) / 160 + 1);
    }
    let bank = GammatoneBank::new();
    let channels = bank.analyze(&wave(noise(16_000, 3)));
    let c = cochleagram(&channels, WINDOW, HOP).unwrap();
    assert_eq!((c.channels(), c.frames()), (64, 99));
    assert!(c.energies.data().iter().all(|&v| v >= 0.0));
    for (k, t) in [(0, 0), (17, 40), (63, 98)] {
        let direct: f64 = channels[k][t * 160..t * 160 + 320].iter().map(|v| v * v).sum();
        assert!((c.energies.get(k, t) - direct).abs() <= 1e-12 * direct.max(1.0));
    }
    let mut silent = channels.clone();
    silent[5] = vec![0.0; 16_000];
    let c = cochleagram(&silent, WINDOW, HOP).unwrap();
    assert!((0..99).all(|t| c.energies.get(5, t) == 0.0));
    assert!(matches!(
        cochleagram(&[vec![0.0; 319]], WINDOW, HOP),
        Err(Error::TooShort {
            needed: 320,
            actual: 319
        })
    ));
}

#[test]
fn mrcg_streams() {
    let bank = GammatoneBank::new();
    let x = noise(8000, 4);
    let m = mrcg_features(&bank, &wave(x.clone())).unwrap();
    assert_eq!((m.rows(), m.cols()), (frame_count(8000, 320, 160), MRCG_WIDTH));
    assert_eq!(MRCG_WIDTH, 256);
    let c = cochleagram(&bank.analyze(&wave(x)), WINDOW, HOP).unwrap();
    for t in [0, 10, m.rows() - 1] {
        for k in [0, 31, 63] {
            assert!((m.get(t, k) - (c.energies.get(k, t) + 1e-12).ln()).abs() <= 1e-12);
        }
    }
    // CG3 is the 11x11 mean of CG1, checked by brute force at interior units.
    for (t, k) in [(5, 5), (20, 30), (30, 58)] {
        let mut sum = 0.0;
        for tt in t - 5..=t + 5 {
            for kk in k - 5..=k + 5 {
                sum += m.get(tt, kk);
            }
        }
        assert!((m.get(t, 128 + k) - sum / 121.0).abs() <= 1e-10);
    }

    // Constant channel signals: every frame and channel carries the same
    // energy, so the smoothed streams equal CG1.
    let flat = vec![vec![0.5; 4000]; 64];
    let m = mrcg_from_channels(&flat).unwrap();
    for t in 0..m.rows() {
        for k in 0..64 {
            let v = m.get(t, k);
            assert!((m.get(t, 128 + k) - v).abs() <= 1e-12);
            assert!((m.get(t, 192 + k) - v).abs() <= 1e-12);
        }
    }
}

#[test]
fn deltas_follow_the_regression_formula() {
    let constant = Grid::from_fn(8, 3, |_, c| c as f64 * 2.5 - 1.0);
    let d = add_deltas(&constant).unwrap();
    assert_eq!(d.cols(), 9);
    assert!((0..8).all(|t| (3..9).all(|c| d.get(t, c) == 0.0)));

    let ramp = Grid::from_fn(9, 2, |t, _| t as f64);
    let d = add_deltas(&ramp).unwrap();
    for t in 2..7 {
        assert!((d.get(t, 2) - 1.0).abs() < 1e-15);
        assert!((d.get(t, 3) - 1.0).abs() < 1e-15);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Grid::from_fn(7, 4, |_, _| rng.gen_range(-3.0..3.0));
    let delta = |g: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let n = g.len() as isize;
        (0..n)
            .map(|t| {
                (0..g[0].len())
                    .map(|c| {
                        let at = |s: isize| g[s.clamp(0, n - 1) as usize][c];
                        (at(t + 1) - at(t - 1) + 2.0 * (at(t + 2) - at(t - 2))) / 10.0
                    })
                    .collect()
            })
            .collect()
    };
    let rows: Vec<Vec<f64>> = (0..7).map(|t| x.row(t).to_vec()).collect();
    let d1 = delta(&rows);
    let d2 = delta(&d1);
    let got = add_deltas(&x).unwrap();
    for t in 0..7 {
        for c in 0..4 {
            assert_eq!(got.get(t, c), x.get(t, c));
            assert!((got.get(t, 4 + c) - d1[t][c]).abs() <= 1e-14);
            assert!((got.get(t, 8 + c) - d2[t][c]).abs() <= 1e-14);
        }
    }
    assert!(matches!(
        add_deltas(&Grid::zeros(4, 3)),
        Err(Error::TooShort { needed: 5, actual: 4 })
    ));
}

#[test]
fn feature_and_mask_shapes() {
    let bank = GammatoneBank::new();
    let x = noise(16_000, 6);
    let c = cochleagram(&bank.analyze(&wave(x.clone())), WINDOW, HOP).unwrap();
    assert_eq!((c.channels(), c.frames()), (64, 99));
    assert_eq!(mrcg_features(&bank, &wave(x.clone())).unwrap().cols(), 256);
    let f = extract_features(&bank, &wave(x.clone())).unwrap();
    assert_eq!((f.rows(), f.cols()), (99, FEATURE_WIDTH));
    assert_eq!(FEATURE_WIDTH, 768);
    let m = irm_from_waveforms(&bank, &wave(x), &wave(noise(16_000, 7))).unwrap();
    assert_eq!((m.rows(), m.cols()), (99, 64));
    assert!(m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
#[allow(clippy::approx_constant)] // 0.70711 is the printed equal-energy value
fn ratio_mask_closed_forms() {
    let m = ideal_ratio_mask(&cg(&[1.0, 1.0, 1.0, 0.0]), &cg(&[0.0, 1.0, 3.0, 0.0]), IRM_BETA).unwrap();
    assert_eq!((m.rows(), m.cols()), (1, 4));
    assert!((m.get(0, 0) - 1.0).abs() <= 1e-12);
    assert!((m.get(0, 1) - 0.5f64.sqrt()).abs() <= 1e-12);
    assert!((m.get(0, 1) - 0.70711).abs() <= 1e-5);
    assert!((m.get(0, 2) - 0.5).abs() <= 1e-12);
    assert_eq!(m.get(0, 3), 0.0);
    assert!(ideal_ratio_mask(&cg(&[1.0]), &cg(&[1.0, 2.0]), 0.5).is_err());
    assert!(ideal_ratio_mask(&cg(&[-1.0]), &cg(&[1.0]), 0.5).is_err());
}

#[test]
fn mixing_hits_the_requested_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let clean = wave(noise(4000, 9));
    let n = noise(4000, 10);
    let n_scaled: Vec<f64> = n.iter().map(|v| v * rms(&clean.samples) / rms(&n)).collect();
    let equal = wave(n_scaled.clone());
    let (noisy, scaled) = mix_at_snr(&clean, &equal, 0.0, &mut rng).unwrap();
    for (s, o) in scaled.samples.iter().zip(&n_scaled) {
        assert!((s - o).abs() <= 1e-12);
    }
    for i in 0..4000 {
        assert!((noisy.samples[i] - clean.samples[i] - scaled.samples[i]).abs() <= 1e-15);
    }
    let (_, scaled) = mix_at_snr(&clean, &equal, 20.0, &mut rng).unwrap();
    for (s, o) in scaled.samples.iter().zip(&n_scaled) {
        assert!((s - 0.1 * o).abs() <= 1e-12);
    }
    assert!(matches!(
        mix_at_snr(&wave(vec![0.0; 100]), &equal, 0.0, &mut rng),
        Err(Error::Silent(_))
    ));
    assert!(mix_at_snr(&clean, &wave(vec![1.0; 10]), 0.0, &mut rng).is_err());
}

fn all_ones_correlation(bank: &GammatoneBank, x: &Waveform) -> f64 {
    let frames = frame_count(x.len(), WINDOW, HOP);
    let y = apply_mask_resynthesize(x, &Grid::from_fn(frames, 64, |_, _| 1.0), bank).unwrap();
    let dot: f64 = y.samples.iter().zip(&x.samples).map(|(a, b)| a * b).sum();
    dot / (rms(&y.samples) * rms(&x.samples) * x.len() as f64)
}

#[test]
fn mask_resynthesis_round_trip() {
    let bank = GammatoneBank::new();
    let utts = generate(18, &[-6.0, -3.0, 0.0, 3.0, 6.0, 9.0], 1.0, 42).unwrap();
    let mut worst: f64 = all_ones_correlation(&bank, &wave(noise(16_000, 3)));
    for u in &utts {
        let (clean, noisy) = (u.clean_wave().unwrap(), u.noisy_wave().unwrap());
        worst = worst.min(all_ones_correlation(&bank, &clean));
        let corr = all_ones_correlation(&bank, &noisy);
        if u.noise_kind == NoiseKind::Brown {
            // Most brown-noise power lies below the lowest channel (50 Hz),
            // where the bank has nothing to give back.
            println!(
                "{} brown noise at {:+} dB: all-ones correlation {corr:.4}",
                u.id, u.snr_db
            );
        } else {
            worst = worst.min(corr);
        }
        let frames = frame_count(noisy.len(), WINDOW, HOP);
        let zeros = apply_mask_resynthesize(&noisy, &Grid::zeros(frames, 64), &bank).unwrap();
        assert!(zeros.samples.iter().all(|&v| v == 0.0));
    }
    println!("all-ones mask, in-band inputs: worst correlation {worst:.4}");
    assert!(worst >= 0.95);
    assert!(apply_mask_resynthesize(&utts[0].noisy_wave().unwrap(), &Grid::zeros(3, 64), &bank).is_err());
}

#[test]
fn oracle_mask_improves_segmental_snr() {
    let bank = GammatoneBank::new();
    let utts = generate(18, &[-6.0, -3.0, 0.0, 3.0, 6.0, 9.0], 1.0, 42).unwrap();
    let mut gains = Vec::new();
    for u in &utts {
        let (clean, noisy, noise) = (
            u.clean_wave().unwrap(),
            u.noisy_wave().unwrap(),
            u.noise_wave().unwrap(),
        );
        let irm = irm_from_waveforms(&bank, &clean, &noise).unwrap();
        let enhanced = apply_mask_resynthesize(&noisy, &irm, &bank).unwrap();
        assert_eq!(enhanced.len(), noisy.len());
        let before = segmental_snr(&clean.samples, &noisy.samples, WINDOW, HOP).unwrap();
        let after = segmental_snr(&clean.samples, &enhanced.samples, WINDOW, HOP).unwrap();
        println!(
            "{} {:?} at {:+} dB: segmental SNR {before:.2} -> {after:.2} dB",
            u.id, u.noise_kind, u.snr_db
        );
        gains.push(after - before);
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    println!(
        "oracle mask: first 0 dB mixture gains {:.2} dB, mean over 18 mixtures {mean:.2} dB",
        gains[2]
    );
    assert!(gains[2] >= 5.0);
    assert!(mean >= 5.0);
}

#[test]
fn segmental_snr_values() {
    let r = noise(1600, 11);
    assert_eq!(segmental_snr(&r, &r, 320, 160).unwrap(), 35.0);
    assert!(segmental_snr(&r, &vec![0.0; 1600], 320, 160).unwrap().abs() < 1e-12);
    assert!(matches!(
        segmental_snr(&[0.0; 640], &[1.0; 640], 320, 160),
        Err(Error::Silent(_))
    ));
    assert!(segmental_snr(&r, &r[..1000], 320, 160).is_err());

    let p: Vec<f64> = r.iter().zip(noise(1600, 12)).map(|(a, b)| a + 0.3 * b).collect();
    let mut total = 0.0;
    let frames = (1600 - 320) / 160 + 1;
    for t in 0..frames {
        let (mut s, mut e) = (0.0, 0.0);
        for i in t * 160..t * 160 + 320 {
            s += r[i] * r[i];
            e += (r[i] - p[i]) * (r[i] - p[i]);
        }
        total += (10.0 * (s / e).log10()).clamp(-10.0, 35.0);
    }
    assert!((segmental_snr(&r, &p, 320, 160).unwrap() - total / frames as f64).abs() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_range_and_monotonicity(s in 0.0f64..1e3, w in 0.0f64..1e3, dw in 0.0f64..1e3, beta in 0.1f64..2.0) {
        let v = irm_unit(s, w, beta);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!(irm_unit(s, w + dw, beta) <= v + 1e-15);
        prop_assert!((irm_unit(s, w, 0.5) - irm_unit(s, w, 1.0).sqrt()).abs() <= 1e-12);
        if s + w > 0.0 {
            prop_assert!((irm_unit(s, w, 1.0) - s / (s + w)).abs() <= 1e-15);
        }
    }

    #[test]
    fn measured_snr_matches_request(seed in any::<u64>(), snr in -20.0f64..30.0, extra in 0usize..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean = wave(noise(2000, seed));
        let n = wave(noise(2000 + extra, seed ^ 1).iter().map(|v| v * 3.0).collect());
        let (noisy, scaled) = mix_at_snr(&clean, &n, snr, &mut rng).unwrap();
        let power = |x: &[f64]| x.iter().fold(0.0, |acc, v| acc + v * v) / x.len() as f64;
        let measured = 10.0 * (power(&clean.samples) / power(&scaled.samples)).log10();
        prop_assert!((measured - snr).abs() <= 1e-9);
        prop_assert_eq!(noisy.len(), clean.len());
    }

    #[test]
    fn frame_formula_and_non_negative_energies(len in 320usize..2400, seed in any::<u64>()) {
        let x = noise(len, seed);
        let c = cochleagram(&[x.clone(), x.iter().map(|v| -2.0 * v).collect()], WINDOW, HOP).unwrap();
        prop_assert_eq!(c.frames(), (len - 320) / 160 + 1);
        prop_assert!(c.energies.data().iter().all(|&v| v >= 0.0));
        for t in 0..c.frames() {
            prop_assert!((c.energies.get(1, t) - 4.0 * c.energies.get(0, t)).abs() <= 1e-12 * c.energies.get(1, t).max(1.0));
        }
    }
}

use super::*;
use crate::rng::{derive_rng, next_normal, next_uniform_in};

fn small_cfg() -> StftConfig {
    StftConfig { sample_rate: 8_000, win_length: 32, hop_length: 8, n_fft: 32, window: WindowKind::Hann }
}

fn random_wave(seed: u64, len: usize, sr: u32) -> Waveform<f64> {
    let mut rng = derive_rng(seed, "dsp-test-wave", 0);
    let samples: Vec<f64> = (0..len).map(|_| next_uniform_in(&mut rng, -0.5, 0.5)).collect();
    Waveform::new(samples, sr).unwrap()
}

/// Direct DFT of one windowed frame; the oracle for `stft` bin content.
fn dft_frame_oracle(x: &[f64], cfg: &StftConfig, frame: usize) -> Vec<f64> {
    let w = window::<f64>(cfg.window, cfg.win_length);
    let start = frame * cfg.hop_length;
    let n = cfg.n_fft as f64;
    (0..cfg.freq_bins())
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for j in 0..cfg.win_length {
                let angle = -std::f64::consts::TAU * k as f64 * j as f64 / n;
                let v = x[start + j] * w[j];
                re += v * angle.cos();
                im += v * angle.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// Hand overlap-add reconstruction from magnitude/phase; the oracle for `istft`.
fn istft_oracle(m: &Magnitude<f64>, p: &Phase<f64>, cfg: &StftConfig) -> Vec<f64> {
    let frames = m.frames();
    let bins = m.freq_bins();
    let n = cfg.n_fft;
    let w = window::<f64>(cfg.window, cfg.win_length);
    let out_len = cfg.output_len(frames);
    let mut num = vec![0.0f64; out_len];
    let mut den = vec![0.0f64; out_len];
    for f in 0..frames {
        for j in 0..cfg.win_length {
            // Real part of the inverse DFT of the Hermitian-extended spectrum.
            let mut acc = 0.0;
            for k in 0..bins {
                let mult = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                let angle = std::f64::consts::TAU * k as f64 * j as f64 / n as f64;
                acc += mult * m.bins.at2(f, k) * (angle + p.bins.at2(f, k)).cos();
            }
            let y = acc / n as f64;
            num[f * cfg.hop_length + j] += y * w[j];
            den[f * cfg.hop_length + j] += w[j] * w[j];
        }
    }
    num.iter().zip(&den).map(|(&a, &b)| if b > 1e-12 { a / b } else { 0.0 }).collect()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

#[test]
fn stft_zero_signal_zero_magnitude() {
    let cfg = small_cfg();
    let x = Waveform::new(vec![0.0f64; 64], cfg.sample_rate).unwrap();
    let (m, p) = stft(&x, &cfg).unwrap();
    assert!(m.bins.data().iter().all(|&v| v == 0.0));
    assert!(p.bins.all_finite());
}

#[test]
fn stft_rejects_short_signal() {
    let cfg = small_cfg();
    let x = Waveform::new(vec![0.1f64; 8], cfg.sample_rate).unwrap();
    match stft(&x, &cfg) {
        Err(CoreError::InvalidInput(_)) => {}
        other => panic!("expected invalid-input error, got {other:?}"),
    }
}

#[test]
fn stft_sine_peaks_at_expected_bin() {
    let cfg = StftConfig::default();
    let sr = cfg.sample_rate as f64;
    let samples: Vec<f64> =
        (0..16_000).map(|i| (std::f64::consts::TAU * 1000.0 * i as f64 / sr).sin() * 0.5).collect();
    let x = Waveform::new(samples.clone(), cfg.sample_rate).unwrap();
    let (m, _) = stft(&x, &cfg).unwrap();
    // 1 kHz at 16 kHz with n_fft 512 lands on bin 1000 / (16000/512) = 32.
    for f in 0..m.frames() {
        let row = m.bins.row(f);
        let argmax = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax, 32, "frame {f}");
    }
    // Against the direct DFT oracle on a couple of frames.
    for frame in [0usize, 7, 55] {
        let oracle = dft_frame_oracle(&samples, &cfg, frame);
        for (k, &o) in oracle.iter().enumerate() {
            assert!((m.bins.at2(frame, k) - o).abs() <= 1e-8 * (1.0 + o), "frame {frame} bin {k}");
        }
    }
}

#[test]
fn istft_zero_magnitude_gives_silence() {
    let cfg = small_cfg();
    let frames = 5;
    let m = Magnitude { bins: Tensor::zeros(&[frames, cfg.freq_bins()]) };
    let p = Phase { bins: Tensor::filled(&[frames, cfg.freq_bins()], 1.3f64) };
    let y = istft(&m, &p, &cfg, None).unwrap();
    assert!(y.samples.iter().all(|&v| v == 0.0));
    assert_eq!(y.len(), cfg.output_len(frames));
}

#[test]
fn istft_shape_mismatch_errors() {
    let cfg = small_cfg();
    let m = Magnitude { bins: Tensor::zeros(&[4, cfg.freq_bins()]) };
    let p = Phase { bins: Tensor::zeros(&[5, cfg.freq_bins()]) };
    assert!(matches!(istft(&m, &p, &cfg, None), Err(CoreError::ShapeMismatch(_))));
}

#[test]
fn istft_is_homogeneous_in_magnitude() {
    let cfg = small_cfg();
    let x = random_wave(11, 96, cfg.sample_rate);
    let (m, p) = stft(&x, &cfg).unwrap();
    let y1 = istft(&m, &p, &cfg, None).unwrap();
    let m2 = Magnitude { bins: m.bins.scale(2.0) };
    let y2 = istft(&m2, &p, &cfg, None).unwrap();
    for (a, b) in y2.samples.iter().zip(&y1.samples) {
        assert!((a - 2.0 * b).abs() <= 1e-12);
    }
}

#[test]
fn round_trip_matches_oracle_and_recovers_signal() {
    let cfg = StftConfig::default();
    let x = random_wave(3, 16_000, cfg.sample_rate);
    let (m, p) = stft(&x, &cfg).unwrap();
    let y = istft(&m, &p, &cfg, None).unwrap();

    let oracle = istft_oracle(&m, &p, &cfg);
    assert!(rel_l2(&y.samples, &oracle) <= 1e-10, "istft disagrees with direct overlap-add");

    // Edges trimmed by one window, relative L2 within 1e-5.
    let (lo, hi) = (cfg.win_length, y.len() - cfg.win_length);
    let err = rel_l2(&y.samples[lo..hi], &x.samples[lo..hi]);
    assert!(err <= 1e-5, "round-trip error {err}");
}

#[test]
fn istft_vjp_zero_gradient() {
    let cfg = small_cfg();
    let x = random_wave(5, 96, cfg.sample_rate);
    let (_, p) = stft(&x, &cfg).unwrap();
    let zeros = vec![0.0f64; cfg.output_len(p.frames())];
    let g = istft_vjp(&zeros, &p, &cfg).unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));
}

#[test]
fn istft_vjp_shape_mismatch_errors() {
    let cfg = small_cfg();
    let p = Phase { bins: Tensor::zeros(&[4, cfg.freq_bins()]) };
    let bad = vec![0.0f64; 10];
    assert!(matches!(istft_vjp(&bad, &p, &cfg), Err(CoreError::ShapeMismatch(_))));
}

#[test]
fn istft_vjp_matches_finite_differences() {
    let cfg = small_cfg();
    let x = random_wave(7, 72, cfg.sample_rate);
    let (m, p) = stft(&x, &cfg).unwrap();
    let out_len = cfg.output_len(m.frames());

    let mut rng = derive_rng(7, "dsp-test-vjp", 1);
    let v: Vec<f64> = (0..out_len).map(|_| next_normal(&mut rng)).collect();

    // g(m) = <istft(m, p), v>; its gradient is exactly istft_vjp(v, p).
    let analytic = istft_vjp(&v, &p, &cfg).unwrap();
    let eval = |bins: &Tensor<f64>| -> f64 {
        let y = istft(&Magnitude { bins: bins.clone() }, &p, &cfg, None).unwrap();
        y.samples.iter().zip(&v).map(|(a, b)| a * b).sum()
    };
    let h = 1e-6;
    let mut max_abs = 0.0f64;
    for i in 0..m.bins.len() {
        let mut plus = m.bins.clone();
        plus.data_mut()[i] += h;
        let mut minus = m.bins.clone();
        minus.data_mut()[i] -= h;
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
        max_abs = max_abs.max((fd - analytic.data()[i]).abs());
    }
    assert!(max_abs <= 1e-5, "max abs error {max_abs}");
}

#[test]
fn istft_vjp_is_linear() {
    let cfg = small_cfg();
    let x = random_wave(9, 72, cfg.sample_rate);
    let (m, p) = stft(&x, &cfg).unwrap();
    let out_len = cfg.output_len(m.frames());
    let mut rng = derive_rng(9, "dsp-test-lin", 0);
    let g1: Vec<f64> = (0..out_len).map(|_| next_normal(&mut rng)).collect();
    let g2: Vec<f64> = (0..out_len).map(|_| next_normal(&mut rng)).collect();
    let (a, b) = (0.7, -1.9);
    let combo: Vec<f64> = g1.iter().zip(&g2).map(|(x, y)| a * x + b * y).collect();
    let lhs = istft_vjp(&combo, &p, &cfg).unwrap();
    let r1 = istft_vjp(&g1, &p, &cfg).unwrap();
    let r2 = istft_vjp(&g2, &p, &cfg).unwrap();
    for i in 0..lhs.len() {
        let rhs = a * r1.data()[i] + b * r2.data()[i];
        assert!((lhs.data()[i] - rhs).abs() <= 1e-10);
    }
}

#[test]
fn cola_validation_rejects_degenerate_pairs() {
    // hop > win is rejected before the overlap-add check.
    let cfg = StftConfig { hop_length: 48, ..small_cfg() };
    assert!(cfg.validate().is_err());
    assert!(small_cfg().validate().is_ok());
    assert!(StftConfig::default().validate().is_ok());
}

#[test]
fn log_mel_zero_magnitude_is_log_floor() {
    let stft_cfg = StftConfig::default();
    let mel_cfg = MelConfig::default();
    let fb = MelFilterbank::<f64>::new(&mel_cfg, &stft_cfg).unwrap();
    let m = Magnitude { bins: Tensor::zeros(&[3, stft_cfg.freq_bins()]) };
    let out = log_mel(&m, &fb).unwrap();
    let expected = mel_cfg.log_floor.ln();
    for &v in out.data() {
        assert!((v - expected).abs() <= 1e-12);
    }
}

#[test]
fn log_mel_tone_peaks_at_nearest_band() {
    let stft_cfg = StftConfig::default();
    let mel_cfg = MelConfig::default();
    let fb = MelFilterbank::<f64>::new(&mel_cfg, &stft_cfg).unwrap();
    // Tone exactly at a band center; the oracle picks the nearest center.
    let f0 = fb.center_hz(15);
    let sr = stft_cfg.sample_rate as f64;
    let samples: Vec<f64> =
        (0..8_000).map(|i| (std::f64::consts::TAU * f0 * i as f64 / sr).sin() * 0.5).collect();
    let x = Waveform::new(samples, stft_cfg.sample_rate).unwrap();
    let (m, _) = stft(&x, &stft_cfg).unwrap();
    let feats = log_mel(&m, &fb).unwrap();

    let nearest = (0..fb.n_mels)
        .min_by(|&a, &b| {
            (fb.center_hz(a) - f0).abs().total_cmp(&(fb.center_hz(b) - f0).abs())
        })
        .unwrap();
    assert_eq!(nearest, 15);
    for t in 0..feats.rows() {
        let row = feats.row(t);
        let argmax = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax, nearest, "frame {t}");
    }
}

#[test]
fn log_mel_scaling_shifts_by_log100() {
    let stft_cfg = StftConfig::default();
    let fb = MelFilterbank::<f64>::new(&MelConfig::default(), &stft_cfg).unwrap();
    let x = random_wave(21, 4_000, stft_cfg.sample_rate);
    let (m, _) = stft(&x, &stft_cfg).unwrap();
    let a = log_mel(&m, &fb).unwrap();
    let m10 = Magnitude { bins: m.bins.scale(10.0) };
    let b = log_mel(&m10, &fb).unwrap();
    let shift = 100.0f64.ln();
    for i in 0..a.len() {
        // Where power dominates the floor the log identity holds.
        if a.data()[i] > (1e6 * fb.log_floor).ln() {
            assert!((b.data()[i] - a.data()[i] - shift).abs() <= 1e-6);
        }
    }
}

#[test]
fn mel_filterbank_rows_and_coverage_positive() {
    let stft_cfg = StftConfig::default();
    let fb = MelFilterbank::<f64>::new(&MelConfig::default(), &stft_cfg).unwrap();
    for band in 0..fb.n_mels {
        let sum: f64 = fb.row(band).iter().sum();
        assert!(sum > 0.0, "band {band} has zero weight");
    }
    // Every FFT bin strictly inside (f_min, f_max) is covered.
    let bin_hz = stft_cfg.sample_rate as f64 / stft_cfg.n_fft as f64;
    let lo = fb.center_hz(0).min(bin_hz); // first grid edge is below band 0 center
    for k in 0..fb.n_bins {
        let f = k as f64 * bin_hz;
        if f > lo && f < 7_999.0 {
            assert!(fb.bin_coverage(k) > 0.0, "bin {k} at {f} Hz uncovered");
        }
    }
}

#[test]
fn mel_config_validation() {
    let cfg = StftConfig::default();
    assert!(MelConfig { f_min: 9_000.0, ..Default::default() }.validate(cfg.sample_rate).is_err());
    assert!(MelConfig { f_max: 10_000.0, ..Default::default() }.validate(cfg.sample_rate).is_err());
    assert!(MelConfig { log_floor: 0.0, ..Default::default() }.validate(cfg.sample_rate).is_err());
    assert!(MelConfig { n_mels: 0, ..Default::default() }.validate(cfg.sample_rate).is_err());
    assert!(MelConfig::default().validate(cfg.sample_rate).is_ok());
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> StftConfig {
        StftConfig {
            sample_rate: 8_000,
            win_length: 32,
            hop_length: 8,
            n_fft: 32,
            window: WindowKind::Hann,
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// Superposition in the magnitude argument at fixed phase.
        #[test]
        fn istft_superposition(seed in 0u64..1_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let c = cfg();
            let x = random_wave(seed, 96, c.sample_rate);
            let (m1, p) = stft(&x, &c).unwrap();
            let x2 = random_wave(seed.wrapping_add(77), 96, c.sample_rate);
            let (m2_full, _) = stft(&x2, &c).unwrap();
            let m2 = Magnitude { bins: m2_full.bins };

            let combo = Magnitude {
                bins: m1.bins.scale(a).add(&m2.bins.scale(b)).unwrap(),
            };
            let lhs = istft(&combo, &p, &c, None).unwrap();
            let y1 = istft(&m1, &p, &c, None).unwrap();
            let y2 = istft(&m2, &p, &c, None).unwrap();
            for i in 0..lhs.len() {
                let rhs = a * y1.samples[i] + b * y2.samples[i];
                prop_assert!((lhs.samples[i] - rhs).abs() <= 1e-10);
            }
        }

        /// Round trip for any waveform of at least three windows.
        #[test]
        fn round_trip_recovers_interior(seed in 0u64..1_000, len in 96usize..400) {
            let c = cfg();
            let x = random_wave(seed, len, c.sample_rate);
            let (m, p) = stft(&x, &c).unwrap();
            let y = istft(&m, &p, &c, None).unwrap();
            let hi = y.len() - c.win_length;
            let err = rel_l2(&y.samples[c.win_length..hi], &x.samples[c.win_length..hi]);
            prop_assert!(err <= 1e-5, "round trip err {}", err);
        }
    }
}

mod common;

use rand::Rng;
use tdnn_kws::{extract_fbank, AudioStream, FrontendConfig};

const LOG_ENERGY_TOL: f64 = 1e-9;

fn noisy_tones(len: usize, seed: u64) -> Vec<f32> {
    let mut r = common::rng(seed);
    let f1 = r.gen_range(100.0..7000.0);
    let f2 = r.gen_range(100.0..7000.0);
    (0..len)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            let v = 0.3 * (2.0 * std::f64::consts::PI * f1 * t).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * f2 * t).cos()
                + r.gen_range(-0.05..0.05);
            v as f32
        })
        .collect()
}

#[test]
fn fft_frontend_matches_direct_dft() {
    let cfg = FrontendConfig::default();
    for seed in 0..4 {
        let samples = noisy_tones(400 + 160 * 5 + seed as usize * 37, seed);
        let lib = extract_fbank(&AudioStream::new(samples.clone(), 16_000).unwrap(), &cfg).unwrap();
        let oracle = common::oracle_fbank(&samples, &cfg);
        assert_eq!(lib.len(), oracle.len());
        for (a, b) in lib.iter().zip(&oracle) {
            assert_eq!(a.values.len(), 41);
            for (x, y) in a.values.iter().zip(b) {
                assert!((x - y).abs() < LOG_ENERGY_TOL, "seed {seed}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn non_default_geometry_matches_too() {
    let cfg = FrontendConfig {
        num_mels: 23,
        n_fft: 1024,
        low_hz: 100.0,
        high_hz: Some(6000.0),
        ..FrontendConfig::default()
    };
    let samples = noisy_tones(2000, 9);
    let lib = extract_fbank(&AudioStream::new(samples.clone(), 16_000).unwrap(), &cfg).unwrap();
    let oracle = common::oracle_fbank(&samples, &cfg);
    assert_eq!(lib.len(), oracle.len());
    for (a, b) in lib.iter().zip(&oracle) {
        for (x, y) in a.values.iter().zip(b) {
            assert!((x - y).abs() < LOG_ENERGY_TOL);
        }
    }
}

#[test]
fn one_kilohertz_tone_lands_in_the_oracle_band() {
    let cfg = FrontendConfig::default();
    let samples: Vec<f32> = (0..4000)
        .map(|i| (0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16_000.0).sin()) as f32)
        .collect();
    let frames = extract_fbank(&AudioStream::new(samples, 16_000).unwrap(), &cfg).unwrap();

    // Triangle with the largest weight at exactly 1 kHz, from HTK mel points.
    let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
    let inv = |m: f64| 700.0 * ((m / 1127.0).exp() - 1.0);
    let (lo, hi) = (mel(20.0), mel(8000.0));
    let pts: Vec<f64> = (0..43)
        .map(|i| inv(lo + (hi - lo) * i as f64 / 42.0))
        .collect();
    let weight = |j: usize| {
        let (a, b, c) = (pts[j], pts[j + 1], pts[j + 2]);
        if (a..=b).contains(&1000.0) {
            (1000.0 - a) / (b - a)
        } else if (b..c).contains(&1000.0) {
            (c - 1000.0) / (c - b)
        } else {
            0.0
        }
    };
    let expected = (0..41)
        .max_by(|&x, &y| weight(x).total_cmp(&weight(y)))
        .unwrap();

    for f in &frames {
        let argmax = (0..41)
            .max_by(|&x, &y| f.values[x].total_cmp(&f.values[y]))
            .unwrap();
        assert_eq!(argmax, expected);
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{mean_square, AudioStream};
use crate::error::{Error, Result};
use crate::features::FrontendConfig;

use super::metrics::{GroundTruth, KeywordSpan};

pub fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Ratio of mean-square powers in dB.
pub fn snr_db(signal: &[f32], noise: &[f32]) -> f64 {
    10.0 * (mean_square(signal) / mean_square(noise)).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub snr_db: f64,
    /// Per-clip gain range in dB, drawn uniformly.
    pub amplitude_range_db: (f64, f64),
    /// Silence inserted between consecutive clips, in seconds, drawn
    /// uniformly.
    pub gap_seconds: (f64, f64),
    pub seed: u64,
}

impl Default for MixSpec {
    fn default() -> Self {
        Self {
            snr_db: 10.0,
            amplitude_range_db: (-10.0, 10.0),
            gap_seconds: (0.0, 0.0),
            seed: 0,
        }
    }
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.amplitude_range_db;
        let (glo, ghi) = self.gap_seconds;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::Config(format!("bad amplitude range {lo}..{hi} dB")));
        }
        if !(0.0 <= glo && glo <= ghi && ghi.is_finite()) {
            return Err(Error::Config(format!("bad gap range {glo}..{ghi} s")));
        }
        Ok(())
    }
}

/// An isolated clip; `label` is a keyword index, `None` for filler.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub audio: AudioStream,
    pub label: Option<usize>,
}

/// Placement of one clip inside a derivative stream, in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub clip: usize,
    pub label: Option<usize>,
    pub start_sample: usize,
    pub end_sample: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeStream {
    pub audio: AudioStream,
    pub truth: GroundTruth,
    pub placements: Vec<Placement>,
    pub gains_db: Vec<f64>,
}

/// Frames `start..end` overlapping samples `start_sample..end_sample`.
pub fn sample_span_to_frames(start_sample: usize, end_sample: usize, hop: usize) -> (usize, usize) {
    (start_sample / hop, end_sample.div_ceil(hop))
}

/// Concatenates clips in a seeded random order with per-clip gains and
/// optional gaps of silence.
pub fn make_derivative_stream(clips: &[LabeledClip], spec: &MixSpec) -> Result<DerivativeStream> {
    spec.validate()?;
    let first = clips
        .first()
        .ok_or_else(|| Error::Empty("derivative stream needs at least one clip".into()))?;
    let rate = first.audio.sample_rate();
    if let Some(c) = clips.iter().find(|c| c.audio.sample_rate() != rate) {
        return Err(Error::Input(format!(
            "mixed sample rates {rate} and {}",
            c.audio.sample_rate()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);

    let (lo, hi) = spec.amplitude_range_db;
    let (glo, ghi) = spec.gap_seconds;
    let mut samples = Vec::new();
    let mut placements = Vec::with_capacity(clips.len());
    let mut gains_db = Vec::with_capacity(clips.len());
    for (n, &i) in order.iter().enumerate() {
        if n > 0 {
            let gap = if ghi > glo {
                rng.gen_range(glo..=ghi)
            } else {
                glo
            };
            samples.resize(samples.len() + (gap * rate as f64).round() as usize, 0.0);
        }
        let db = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let gain = db_to_gain(db) as f32;
        let start = samples.len();
        samples.extend(clips[i].audio.samples().iter().map(|s| s * gain));
        placements.push(Placement {
            clip: i,
            label: clips[i].label,
            start_sample: start,
            end_sample: samples.len(),
        });
        gains_db.push(db);
    }

    let hop = FrontendConfig {
        sample_rate: rate,
        ..FrontendConfig::default()
    }
    .hop_len();
    let spans = placements
        .iter()
        .filter_map(|p| {
            let k = p.label?;
            let (start_frame, end_frame) = sample_span_to_frames(p.start_sample, p.end_sample, hop);
            (end_frame > start_frame).then_some(KeywordSpan {
                keyword: k,
                start_frame,
                end_frame,
            })
        })
        .collect::<Vec<_>>();
    let audio = AudioStream::new(samples, rate)?;
    let truth = GroundTruth::new(spans, audio.duration_seconds())?;
    Ok(DerivativeStream {
        audio,
        truth,
        placements,
        gains_db,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixResult {
    pub audio: AudioStream,
    /// Factor applied to the (looped) noise.
    pub noise_gain: f64,
    pub clipped_fraction: f64,
}

/// Adds `noise` scaled to the requested SNR over the whole stream. Noise
/// shorter than the clean signal is looped from a seeded random offset.
/// The sum is clipped to [-1, 1].
pub fn mix_noise(
    clean: &AudioStream,
    noise: &AudioStream,
    snr_db: f64,
    seed: u64,
) -> Result<MixResult> {
    if clean.sample_rate() != noise.sample_rate() {
        return Err(Error::Input(format!(
            "clean rate {} differs from noise rate {}",
            clean.sample_rate(),
            noise.sample_rate()
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("SNR must be finite, got {snr_db}")));
    }
    let p_clean = mean_square(clean.samples());
    if p_clean <= 0.0 {
        return Err(Error::UndefinedSnr("clean signal has zero power".into()));
    }
    if noise.is_empty() {
        return Err(Error::Empty("noise signal".into()));
    }
    let n = noise.len();
    let offset = if n < clean.len() {
        ChaCha8Rng::seed_from_u64(seed).gen_range(0..n)
    } else {
        0
    };
    let looped: Vec<f64> = (0..clean.len())
        .map(|i| noise.samples()[(offset + i) % n] as f64)
        .collect();
    let p_noise = looped.iter().map(|v| v * v).sum::<f64>() / looped.len().max(1) as f64;
    if p_noise <= 0.0 {
        return Err(Error::UndefinedSnr("noise signal has zero power".into()));
    }
    let noise_gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut clipped = 0usize;
    let mixed: Vec<f32> = clean
        .samples()
        .iter()
        .zip(&looped)
        .map(|(&c, &v)| {
            let y = c as f64 + noise_gain * v;
            if y.abs() > 1.0 {
                clipped += 1;
            }
            y.clamp(-1.0, 1.0) as f32
        })
        .collect();
    let clipped_fraction = clipped as f64 / clean.len().max(1) as f64;
    if clipped > 0 {
        log::warn!(
            "mix at {snr_db} dB clipped {:.3}% of samples",
            100.0 * clipped_fraction
        );
    }
    Ok(MixResult {
        audio: AudioStream::new(mixed, clean.sample_rate())?,
        noise_gain,
        clipped_fraction,
    })
}

pub fn white_noise(num_samples: usize, sample_rate: u32, seed: u64) -> Result<AudioStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..num_samples)
        .map(|_| rng.gen_range(-1.0f32..1.0))
        .collect();
    AudioStream::new(samples, sample_rate)
}

/// Approximately 1/f noise (Paul Kellet's refined filter over white noise),
/// scaled to peak near 1.
pub fn pink_noise(num_samples: usize, sample_rate: u32, seed: u64) -> Result<AudioStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = [0.0f64; 7];
    let samples = (0..num_samples)
        .map(|_| {
            let w: f64 = rng.gen_range(-1.0..1.0);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let out = b[..6].iter().sum::<f64>() + b[6] + w * 0.5362;
            b[6] = w * 0.115926;
            (out * 0.11) as f32
        })
        .collect();
    AudioStream::new(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize, amp: f32) -> AudioStream {
        AudioStream::new(
            (0..len).map(|i| amp * (i as f32 * 0.05).sin()).collect(),
            16000,
        )
        .unwrap()
    }

    #[test]
    fn two_clip_offsets() {
        let clips = vec![
            LabeledClip {
                audio: tone(3000, 0.1),
                label: Some(0),
            },
            LabeledClip {
                audio: tone(5000, 0.1),
                label: Some(1),
            },
        ];
        let spec = MixSpec {
            gap_seconds: (0.25, 0.25),
            seed: 9,
            ..MixSpec::default()
        };
        let a = make_derivative_stream(&clips, &spec).unwrap();
        let b = make_derivative_stream(&clips, &spec).unwrap();
        assert_eq!(a, b);
        let len1 = clips[a.placements[0].clip].audio.len();
        let len2 = clips[a.placements[1].clip].audio.len();
        assert_eq!(
            (a.placements[0].start_sample, a.placements[0].end_sample),
            (0, len1)
        );
        assert_eq!(
            (a.placements[1].start_sample, a.placements[1].end_sample),
            (len1 + 4000, len1 + 4000 + len2)
        );
        assert_eq!(a.audio.len(), 3000 + 5000 + 4000);
        assert_eq!(a.truth.spans.len(), 2);
    }

    #[test]
    fn gain_of_minus_six_db_halves() {
        let clip = tone(800, 0.4);
        let spec = MixSpec {
            amplitude_range_db: (-6.0206, -6.0206),
            ..MixSpec::default()
        };
        let s = make_derivative_stream(
            &[LabeledClip {
                audio: clip.clone(),
                label: None,
            }],
            &spec,
        )
        .unwrap();
        for (a, b) in s.audio.samples().iter().zip(clip.samples()) {
            assert!((a - b / 2.0).abs() < 1e-6);
        }
        assert!(s.truth.spans.is_empty());
    }

    #[test]
    fn empty_clip_set_rejected() {
        assert!(matches!(
            make_derivative_stream(&[], &MixSpec::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn equal_power_at_zero_db_has_unit_gain() {
        let clean = tone(16000, 0.3);
        let r = mix_noise(&clean, &clean, 0.0, 0).unwrap();
        assert!((r.noise_gain - 1.0).abs() < 1e-9);
    }

    #[test]
    fn very_high_snr_leaves_clean_signal() {
        let clean = tone(16000, 0.3);
        let noise = white_noise(16000, 16000, 1).unwrap();
        let r = mix_noise(&clean, &noise, 120.0, 0).unwrap();
        for (a, b) in r.audio.samples().iter().zip(clean.samples()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn silent_clean_is_undefined() {
        let clean = AudioStream::silence(100, 16000).unwrap();
        let noise = white_noise(100, 16000, 0).unwrap();
        assert!(matches!(
            mix_noise(&clean, &noise, 10.0, 0),
            Err(Error::UndefinedSnr(_))
        ));
    }

    #[test]
    fn short_noise_is_looped() {
        let clean = tone(10000, 0.3);
        let noise = white_noise(777, 16000, 3).unwrap();
        let r = mix_noise(&clean, &noise, 10.0, 5).unwrap();
        assert_eq!(r.audio.len(), clean.len());
        assert_eq!(r.clipped_fraction, 0.0);
    }

    #[test]
    fn pink_noise_has_more_low_frequency_power() {
        let p = pink_noise(32000, 16000, 0).unwrap();
        let s = p.samples();
        // First difference acts as a high-pass filter.
        let diff: Vec<f32> = s.windows(2).map(|w| w[1] - w[0]).collect();
        let w = white_noise(32000, 16000, 0).unwrap();
        let wd: Vec<f32> = w.samples().windows(2).map(|w| w[1] - w[0]).collect();
        let ratio_pink = mean_square(&diff) / mean_square(s);
        let ratio_white = mean_square(&wd) / mean_square(w.samples());
        assert!(ratio_pink < 0.5 * ratio_white);
        assert!(s.iter().all(|v| v.abs() < 1.0));
    }
}

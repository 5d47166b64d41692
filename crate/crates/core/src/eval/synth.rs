//! Synthetic phone-like audio for desk-scale experiments.
//!
//! Voiced phones are a jittered pulse train through cascaded formant
//! resonators; fricatives are white noise through a single wide resonator.
//! Each rendered clip draws its own voice (pitch, formant scaling, tempo),
//! so the same phone string never sounds identical twice.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::FrontendConfig;

pub const SILENCE: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Silence,
    Voiced {
        formants: [(f64, f64); 3],
        rms: f64,
    },
    Noise {
        centre: f64,
        bandwidth: f64,
        rms: f64,
    },
}

/// Printable names, indexed by phone label.
pub const PHONE_NAMES: [&str; 13] = [
    "sil", "aa", "iy", "uw", "eh", "ow", "ae", "er", "m", "s", "sh", "f", "hh",
];

pub const NUM_PHONES: usize = PHONE_NAMES.len();

fn source(phone: usize) -> Source {
    let v = |f1, f2, f3, rms| Source::Voiced {
        formants: [(f1, 90.0), (f2, 110.0), (f3, 150.0)],
        rms,
    };
    let n = |centre, bandwidth, rms| Source::Noise {
        centre,
        bandwidth,
        rms,
    };
    match phone {
        1 => v(730.0, 1090.0, 2440.0, 0.10),
        2 => v(270.0, 2290.0, 3010.0, 0.09),
        3 => v(300.0, 870.0, 2240.0, 0.09),
        4 => v(530.0, 1840.0, 2480.0, 0.10),
        5 => v(570.0, 840.0, 2410.0, 0.10),
        6 => v(660.0, 1720.0, 2410.0, 0.10),
        7 => v(490.0, 1350.0, 1690.0, 0.09),
        8 => Source::Voiced {
            formants: [(250.0, 60.0), (1100.0, 300.0), (2300.0, 400.0)],
            rms: 0.05,
        },
        9 => n(6200.0, 1800.0, 0.05),
        10 => n(3000.0, 900.0, 0.06),
        11 => n(4500.0, 4000.0, 0.025),
        12 => n(1500.0, 1600.0, 0.025),
        _ => Source::Silence,
    }
}

/// Speaker-like variation applied to one rendered clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Voice {
    pub f0: f64,
    pub formant_scale: f64,
    /// Multiplies every phone duration.
    pub tempo: f64,
}

impl Voice {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        Self {
            f0: rng.gen_range(90.0..240.0),
            formant_scale: rng.gen_range(0.9..1.12),
            tempo: rng.gen_range(0.8..1.25),
        }
    }
}

/// Two-pole resonator with unit gain at its centre frequency.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, sample_rate: f64) -> Self {
        let r = (-PI * bandwidth / sample_rate).exp();
        let theta = 2.0 * PI * freq / sample_rate;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            gain: (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt(),
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub samples: Vec<f32>,
    /// Phone label of every sample.
    pub labels: Vec<usize>,
}

impl Rendered {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn append(&mut self, other: Rendered) {
        self.samples.extend(other.samples);
        self.labels.extend(other.labels);
    }

    /// Label of each frame's centre sample.
    pub fn frame_labels(&self, config: &FrontendConfig) -> Vec<usize> {
        let (frame, hop) = (config.frame_len(), config.hop_len());
        (0..config.num_frames(self.len()))
            .map(|t| self.labels[t * hop + frame / 2])
            .collect()
    }
}

/// Renders `phones` with `voice`. Durations are drawn per phone between 60
/// and 140 ms (before tempo scaling); `SILENCE` renders a near-silent gap.
pub fn render<R: Rng>(phones: &[usize], voice: &Voice, sample_rate: u32, rng: &mut R) -> Rendered {
    let fs = sample_rate as f64;
    let mut out = Rendered {
        samples: Vec::new(),
        labels: Vec::new(),
    };
    let mut phase = 0.0f64;
    let ramp = (0.008 * fs) as usize;
    for &p in phones {
        let dur = (rng.gen_range(0.06..0.14) * voice.tempo * fs) as usize;
        let mut buf = vec![0.0f64; dur];
        match source(p) {
            Source::Silence => {}
            Source::Voiced { formants, rms } => {
                let mut res: Vec<Resonator> = formants
                    .iter()
                    .map(|&(f, bw)| {
                        Resonator::new((f * voice.formant_scale).min(fs * 0.45), bw, fs)
                    })
                    .collect();
                let f0 = voice.f0 * rng.gen_range(0.95..1.05);
                for (i, v) in buf.iter_mut().enumerate() {
                    let glide = 1.0 + 0.05 * (i as f64 / dur as f64 - 0.5);
                    phase += f0 * glide / fs;
                    let mut x = 0.0;
                    if phase >= 1.0 {
                        phase -= 1.0;
                        x = 1.0;
                    }
                    x += 0.02 * rng.gen_range(-1.0..1.0);
                    *v = res.iter_mut().fold(x, |acc, r| r.step(acc));
                }
                normalize(&mut buf, rms * rng.gen_range(0.8..1.2));
            }
            Source::Noise {
                centre,
                bandwidth,
                rms,
            } => {
                let mut r =
                    Resonator::new((centre * voice.formant_scale).min(fs * 0.45), bandwidth, fs);
                for v in buf.iter_mut() {
                    *v = r.step(rng.gen_range(-1.0..1.0));
                }
                normalize(&mut buf, rms * rng.gen_range(0.8..1.2));
            }
        }
        let n = buf.len();
        for i in 0..ramp.min(n / 2) {
            let w = 0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos();
            buf[i] *= w;
            buf[n - 1 - i] *= w;
        }
        out.samples.extend(buf.iter().map(|&v| v as f32));
        out.labels.extend(std::iter::repeat_n(p, n));
    }
    out
}

fn normalize(buf: &mut [f64], target_rms: f64) {
    let ms = buf.iter().map(|v| v * v).sum::<f64>() / buf.len().max(1) as f64;
    if ms > 0.0 {
        let g = target_rms / ms.sqrt();
        buf.iter_mut().for_each(|v| *v *= g);
    }
}

/// Silence of `seconds`, labelled `SILENCE`.
pub fn silence(seconds: f64, sample_rate: u32) -> Rendered {
    let n = (seconds * sample_rate as f64) as usize;
    Rendered {
        samples: vec![0.0; n],
        labels: vec![SILENCE; n],
    }
}

/// Adds faint white noise so silent stretches still have finite log energy.
pub fn add_noise_floor<R: Rng>(samples: &mut [f32], amplitude: f32, rng: &mut R) {
    for s in samples {
        *s += amplitude * rng.gen_range(-1.0f32..1.0);
    }
}

/// True when `needle` occurs contiguously in `hay`.
pub fn contains_run(hay: &[usize], needle: &[usize]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// A random non-silence phone string of length `len`.
pub fn random_phones<R: Rng>(len: usize, rng: &mut R) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(1..NUM_PHONES)).collect()
}

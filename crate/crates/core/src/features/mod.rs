//! Log-Mel filterbank (FBANK) frontend: 25 ms Hamming frames every 10 ms,
//! pre-emphasis, power spectrum, 41 triangular mel filters, floored log.

mod mel;
mod normalizer;

use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};
pub use normalizer::{FeatureNormalizer, VARIANCE_EPS};

use crate::audio::AudioStream;
use crate::error::{Error, Result};

pub const NUM_MELS: usize = 41;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub frame_ms: u32,
    pub hop_ms: u32,
    pub n_fft: usize,
    pub num_mels: usize,
    pub low_hz: f64,
    /// Upper mel edge; `None` means Nyquist.
    pub high_hz: Option<f64>,
    pub pre_emphasis: f64,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_ms: 25,
            hop_ms: 10,
            n_fft: 512,
            num_mels: NUM_MELS,
            low_hz: 20.0,
            high_hz: None,
            pre_emphasis: 0.97,
            log_floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    pub fn frame_len(&self) -> usize {
        (self.sample_rate as u64 * self.frame_ms as u64 / 1000) as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.sample_rate as u64 * self.hop_ms as u64 / 1000) as usize
    }

    pub fn high_hz(&self) -> f64 {
        self.high_hz.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    pub fn frames_per_second(&self) -> f64 {
        1000.0 / self.hop_ms as f64
    }

    /// Frames produced for `num_samples` input samples.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        let frame_len = self.frame_len();
        if num_samples < frame_len {
            0
        } else {
            (num_samples - frame_len) / self.hop_len() + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if self.frame_len() == 0 || self.hop_len() == 0 {
            return Err(Error::Config(
                "frame and hop lengths must be positive".into(),
            ));
        }
        if self.n_fft < self.frame_len() {
            return Err(Error::Config(format!(
                "n_fft {} shorter than frame length {}",
                self.n_fft,
                self.frame_len()
            )));
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return Err(Error::Config("log floor must be positive".into()));
        }
        Ok(())
    }
}

/// One feature vector per hop. `index` counts hops from the start of the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub index: usize,
    pub values: Vec<f64>,
}

impl FeatureFrame {
    pub fn new(index: usize, values: Vec<f64>) -> Self {
        Self { index, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Reusable FBANK computation (window, FFT plan and mel weights).
#[derive(Clone)]
pub struct Fbank {
    config: FrontendConfig,
    window: Vec<f64>,
    filters: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fbank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fbank")
            .field("config", &self.config)
            .finish()
    }
}

impl Fbank {
    pub fn new(config: FrontendConfig) -> Result<Self> {
        config.validate()?;
        let n = config.frame_len();
        let window = (0..n)
            .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
            .collect();
        let filters = MelFilterbank::new(
            config.num_mels,
            config.n_fft,
            config.sample_rate,
            config.low_hz,
            config.high_hz(),
        )?;
        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        Ok(Self {
            config,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn filters(&self) -> &MelFilterbank {
        &self.filters
    }

    /// Log mel energies of one frame of already pre-emphasized samples.
    fn frame_features(&self, frame: &[f64], buf: &mut Vec<Complex<f64>>) -> Vec<f64> {
        buf.clear();
        buf.extend(
            frame
                .iter()
                .zip(&self.window)
                .map(|(s, w)| Complex::new(s * w, 0.0)),
        );
        buf.resize(self.config.n_fft, Complex::new(0.0, 0.0));
        self.fft.process(buf);
        let power: Vec<f64> = buf[..self.filters.num_bins()]
            .iter()
            .map(|c| c.norm_sqr())
            .collect();
        let mut energies = vec![0.0; self.config.num_mels];
        self.filters.apply(&power, &mut energies);
        energies
            .iter()
            .map(|&e| e.max(self.config.log_floor).ln())
            .collect()
    }

    /// Un-normalized FBANK frames for a whole stream. Shorter-than-one-frame
    /// audio yields an empty vector.
    pub fn extract(&self, audio: &AudioStream) -> Result<Vec<FeatureFrame>> {
        let mut stream = FbankStream::new(self.clone());
        stream.push(audio.samples())
    }
}

/// Incremental FBANK extraction over arbitrarily chunked audio; produces the
/// same frames as [`extract_fbank`] on the concatenated input.
#[derive(Debug, Clone)]
pub struct FbankStream {
    fbank: Fbank,
    pending: Vec<f64>,
    prev_sample: Option<f64>,
    next_index: usize,
}

impl FbankStream {
    pub fn new(fbank: Fbank) -> Self {
        Self {
            fbank,
            pending: Vec::new(),
            prev_sample: None,
            next_index: 0,
        }
    }

    pub fn push(&mut self, samples: &[f32]) -> Result<Vec<FeatureFrame>> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite sample at chunk offset {i}"
            )));
        }
        let alpha = self.fbank.config.pre_emphasis;
        for &s in samples {
            let s = s as f64;
            let y = match self.prev_sample {
                Some(prev) => s - alpha * prev,
                None => s,
            };
            self.prev_sample = Some(s);
            self.pending.push(y);
        }

        let (frame_len, hop) = (self.fbank.config.frame_len(), self.fbank.config.hop_len());
        let mut frames = Vec::new();
        let mut buf = Vec::with_capacity(self.fbank.config.n_fft);
        let mut start = 0;
        while start + frame_len <= self.pending.len() {
            let values = self
                .fbank
                .frame_features(&self.pending[start..start + frame_len], &mut buf);
            frames.push(FeatureFrame::new(self.next_index, values));
            self.next_index += 1;
            start += hop;
        }
        self.pending.drain(..start.min(self.pending.len()));
        Ok(frames)
    }

    pub fn frames_emitted(&self) -> usize {
        self.next_index
    }
}

/// One-shot extraction. The audio rate must match the config (no resampling).
pub fn extract_fbank(audio: &AudioStream, config: &FrontendConfig) -> Result<Vec<FeatureFrame>> {
    if audio.sample_rate() != config.sample_rate {
        return Err(Error::Config(format!(
            "audio sample rate {} Hz does not match frontend rate {} Hz",
            audio.sample_rate(),
            config.sample_rate
        )));
    }
    Fbank::new(config.clone())?.extract(audio)
}

//! Mono PCM audio and 16-bit WAV I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Mono PCM samples in `[-1, 1]` at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioStream {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioStream {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Input(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(num_samples: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; num_samples], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean square of the samples; zero for an empty stream.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let wav_err = |source| Error::Wav {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = hound::WavReader::open(path).map_err(|e| match e {
            hound::Error::IoError(io) => Error::io(path, io),
            other => wav_err(other),
        })?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::Input(format!(
                "{}: expected mono audio, found {} channels",
                path.display(),
                spec.channels
            )));
        }
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(Error::Input(format!(
                "{}: expected 16-bit integer PCM, found {:?} {}-bit",
                path.display(),
                spec.sample_format,
                spec.bits_per_sample
            )));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wav_err)?;
        Self::new(samples, spec.sample_rate)
    }

    /// Writes 16-bit mono PCM. Samples are clamped to `[-1, 1]` first.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let wav_err = |source| Error::Wav {
            path: path.to_path_buf(),
            source,
        };
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec).map_err(|e| match e {
            hound::Error::IoError(io) => Error::io(path, io),
            other => wav_err(other),
        })?;
        for &s in &self.samples {
            writer.write_sample(to_i16(s)).map_err(wav_err)?;
        }
        writer.finalize().map_err(wav_err)
    }
}

pub(crate) fn mean_square(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .map(|&s| (s as f64) * (s as f64))
        .sum::<f64>()
        / samples.len() as f64
}

fn to_i16(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_rate_and_nan() {
        assert!(matches!(
            AudioStream::new(vec![0.0], 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            AudioStream::new(vec![0.0, f32::NAN], 16000),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn wav_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f32> = (0..1000).map(|i| ((i as f32) * 0.01).sin() * 0.5).collect();
        let audio = AudioStream::new(samples.clone(), 16000).unwrap();
        audio.write_wav(&path).unwrap();
        let back = AudioStream::read_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 16000);
        assert_eq!(back.len(), 1000);
        for (a, b) in samples.iter().zip(back.samples()) {
            assert!((a - b).abs() < 1.0 / 16000.0);
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = AudioStream::read_wav("/nonexistent/x.wav").unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err:?}");
    }
}

//! Triangular mel filterbank on the HTK mel scale.

use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone)]
struct Filter {
    first_bin: usize,
    weights: Vec<f64>,
}

/// `num_mels` triangles with edges equally spaced in mel between `low_hz`
/// and `high_hz`, evaluated at the FFT bin centre frequencies.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    filters: Vec<Filter>,
    edges_hz: Vec<f64>,
    num_bins: usize,
}

impl MelFilterbank {
    pub fn new(
        num_mels: usize,
        n_fft: usize,
        sample_rate: u32,
        low_hz: f64,
        high_hz: f64,
    ) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if num_mels == 0 || n_fft < 2 {
            return Err(Error::Config(
                "mel filterbank needs filters and an FFT".into(),
            ));
        }
        if !(0.0..high_hz).contains(&low_hz) || high_hz > nyquist {
            return Err(Error::Config(format!(
                "mel range [{low_hz}, {high_hz}] Hz invalid for nyquist {nyquist} Hz"
            )));
        }
        let num_bins = n_fft / 2 + 1;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let (mel_lo, mel_hi) = (hz_to_mel(low_hz), hz_to_mel(high_hz));
        let edges_hz: Vec<f64> = (0..num_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (num_mels + 1) as f64))
            .collect();

        let mut filters = Vec::with_capacity(num_mels);
        for m in 0..num_mels {
            let (left, centre, right) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
            let mut first_bin = None;
            let mut weights = Vec::new();
            for k in 0..num_bins {
                let f = k as f64 * bin_hz;
                let w = if f > left && f <= centre {
                    (f - left) / (centre - left)
                } else if f > centre && f < right {
                    (right - f) / (right - centre)
                } else {
                    0.0
                };
                if w > 0.0 {
                    let start = *first_bin.get_or_insert(k);
                    weights.resize(k - start, 0.0);
                    weights.push(w);
                }
            }
            let Some(first_bin) = first_bin else {
                return Err(Error::Config(format!(
                    "mel filter {m} ({left:.1}-{right:.1} Hz) covers no FFT bin; increase n_fft"
                )));
            };
            filters.push(Filter { first_bin, weights });
        }
        Ok(Self {
            filters,
            edges_hz,
            num_bins,
        })
    }

    pub fn num_filters(&self) -> usize {
        self.filters.len()
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn centre_hz(&self, m: usize) -> f64 {
        self.edges_hz[m + 1]
    }

    /// Weighted sums of a power spectrum (`num_bins` entries).
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        debug_assert_eq!(power.len(), self.num_bins);
        for (o, f) in out.iter_mut().zip(&self.filters) {
            *o = f
                .weights
                .iter()
                .zip(&power[f.first_bin..])
                .map(|(w, p)| w * p)
                .sum();
        }
    }

    /// Dense weight for filter `m` at bin `k`.
    pub fn weight(&self, m: usize, k: usize) -> f64 {
        let f = &self.filters[m];
        k.checked_sub(f.first_bin)
            .and_then(|i| f.weights.get(i).copied())
            .unwrap_or(0.0)
    }
}

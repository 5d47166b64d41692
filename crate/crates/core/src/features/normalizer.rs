use serde::{Deserialize, Serialize};

use super::FeatureFrame;
use crate::error::{Error, Result};

/// Variance floor added before the square root.
pub const VARIANCE_EPS: f64 = 1e-8;

/// Global per-dimension affine normalization, fit once on a corpus and
/// stored with the model so streaming inference can apply it frame by frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn new(mean: Vec<f64>, inv_std: Vec<f64>) -> Result<Self> {
        if mean.len() != inv_std.len() {
            return Err(Error::shape(
                "normalizer inv_std",
                mean.len(),
                inv_std.len(),
            ));
        }
        if let Some(i) = inv_std.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!(
                "inv_std[{i}] = {} must be positive and finite",
                inv_std[i]
            )));
        }
        if let Some(i) = mean.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("mean[{i}] is not finite")));
        }
        Ok(Self { mean, inv_std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            inv_std: vec![1.0; dim],
        }
    }

    /// Population mean and variance per dimension; `inv_std = 1/sqrt(var + eps)`.
    pub fn fit(frames: &[FeatureFrame]) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "normalizer needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let dim = frames[0].values.len();
        if let Some(f) = frames.iter().find(|f| f.values.len() != dim) {
            return Err(Error::shape("normalizer fit frame", dim, f.values.len()));
        }
        let n = frames.len() as f64;
        let mut mean = vec![0.0; dim];
        for f in frames {
            for (m, v) in mean.iter_mut().zip(&f.values) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for f in frames {
            for ((s, v), m) in var.iter_mut().zip(&f.values).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std = var
            .iter()
            .map(|s| 1.0 / (s / n + VARIANCE_EPS).sqrt())
            .collect();
        Self::new(mean, inv_std)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn inv_std(&self) -> &[f64] {
        &self.inv_std
    }

    pub fn apply(&self, frame: &FeatureFrame) -> Result<FeatureFrame> {
        self.check_dim(frame)?;
        let values = frame
            .values
            .iter()
            .zip(self.mean.iter().zip(&self.inv_std))
            .map(|(x, (m, s))| (x - m) * s)
            .collect();
        Ok(FeatureFrame {
            index: frame.index,
            values,
        })
    }

    pub fn apply_all(&self, frames: &[FeatureFrame]) -> Result<Vec<FeatureFrame>> {
        frames.iter().map(|f| self.apply(f)).collect()
    }

    pub fn invert(&self, frame: &FeatureFrame) -> Result<FeatureFrame> {
        self.check_dim(frame)?;
        let values = frame
            .values
            .iter()
            .zip(self.mean.iter().zip(&self.inv_std))
            .map(|(y, (m, s))| y / s + m)
            .collect();
        Ok(FeatureFrame {
            index: frame.index,
            values,
        })
    }

    fn check_dim(&self, frame: &FeatureFrame) -> Result<()> {
        if frame.values.len() != self.dim() {
            return Err(Error::shape(
                "normalizer input",
                self.dim(),
                frame.values.len(),
            ));
        }
        Ok(())
    }
}

//! Forward evaluation of a [`TdnnModel`] over feature sequences.
//!
//! Every word output consumes `pooled_context` pooled phone vectors spaced
//! `pool_stride` frames apart, so the full input window slides one frame
//! per output. Phone outputs, pooled vectors and word outputs are produced
//! on a fixed stride schedule selected by [`SkipMode`]:
//!
//! | mode    | phone/word eval every | phone vectors pooled together |
//! |---------|-----------------------|-------------------------------|
//! | none    | 1 frame               | `pool_size` (5)               |
//! | stride2 | 2 frames              | `pool_size / 2` (2)           |
//! | stride4 | 4 frames              | 1 (no pooling)                |
//!
//! [`batch_forward`] evaluates a whole sequence directly; [`StreamState`]
//! produces the same trace incrementally with ring buffers so that each new
//! frame costs one phone evaluation and one word evaluation.

mod export;
mod ring;
mod smoothing;
mod stream;
mod trigger;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use export::{read_trace_csv, write_events_jsonl, write_trace_csv};
pub use ring::Ring;
pub use smoothing::{smooth_scores, DEFAULT_SMOOTHING_WIDTH};
pub use stream::{StepOutput, StreamState};
pub use trigger::{
    detect_events, DetectionEvent, PeakPicker, TriggerConfig, DEFAULT_SUPPRESSION_FRAMES,
};

use crate::error::{Error, Result};
use crate::features::FeatureFrame;
use crate::model::TdnnModel;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    #[default]
    None,
    Stride2,
    Stride4,
}

impl SkipMode {
    pub const ALL: [SkipMode; 3] = [SkipMode::None, SkipMode::Stride2, SkipMode::Stride4];

    pub fn stride(self) -> usize {
        match self {
            SkipMode::None => 1,
            SkipMode::Stride2 => 2,
            SkipMode::Stride4 => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SkipMode::None => "TDNN",
            SkipMode::Stride2 => "TDNN-skip2",
            SkipMode::Stride4 => "TDNN-skip4",
        }
    }
}

impl fmt::Display for SkipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipMode::None => "none",
            SkipMode::Stride2 => "stride2",
            SkipMode::Stride4 => "stride4",
        })
    }
}

impl FromStr for SkipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "1" | "0" => Ok(SkipMode::None),
            "2" | "stride2" | "skip2" => Ok(SkipMode::Stride2),
            "4" | "stride4" | "skip4" => Ok(SkipMode::Stride4),
            other => Err(Error::Config(format!(
                "unknown skip mode {other:?} (expected none, 2 or 4)"
            ))),
        }
    }
}

/// Evaluation schedule of one model under one skip mode. Phone outputs are
/// indexed by their strided ordinal `i`, covering frames `i*stride ..
/// i*stride + context_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub stride: usize,
    pub context_len: usize,
    pub feat_dim: usize,
    pub phone_dim: usize,
    /// Consecutive strided phone vectors max-pooled into one pooled vector.
    pub pool_count: usize,
    /// Strided indices between successive pooled inputs of the word network.
    pub pooled_spacing: usize,
    pub pooled_context: usize,
    pub num_classes: usize,
}

impl Geometry {
    pub fn new(model: &TdnnModel, skip: SkipMode) -> Result<Self> {
        let (p, w) = (model.phone_nn(), model.word_nn());
        let stride = skip.stride();
        if w.pool_stride() % stride != 0 {
            return Err(Error::Config(format!(
                "skip stride {stride} does not divide pool stride {}",
                w.pool_stride()
            )));
        }
        Ok(Self {
            stride,
            context_len: p.context_len(),
            feat_dim: p.feat_dim(),
            phone_dim: p.output_dim(),
            pool_count: (w.pool_size() / stride).max(1),
            pooled_spacing: w.pool_stride() / stride,
            pooled_context: w.pooled_context(),
            num_classes: w.num_classes(),
        })
    }

    /// Strided phone outputs that feed one word output.
    pub fn phone_span(&self) -> usize {
        (self.pooled_context - 1) * self.pooled_spacing + self.pool_count
    }

    /// Input frames seen by one word output.
    pub fn receptive_field(&self) -> usize {
        (self.phone_span() - 1) * self.stride + self.context_len
    }

    pub fn num_phone_evals(&self, num_frames: usize) -> usize {
        if num_frames < self.context_len {
            0
        } else {
            (num_frames - self.context_len) / self.stride + 1
        }
    }

    pub fn num_word_outputs(&self, num_frames: usize) -> usize {
        self.num_phone_evals(num_frames)
            .saturating_sub(self.phone_span() - 1)
    }

    /// Last input frame consumed by the phone output with strided index `i`.
    pub fn output_frame(&self, i: usize) -> usize {
        i * self.stride + self.context_len - 1
    }

    /// Strided index of the first phone output that completes a word window.
    pub fn first_word_index(&self) -> usize {
        self.phone_span() - 1
    }
}

/// Raw and smoothed class posteriors for one word output. `frame_index` is
/// the last input frame the output depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub frame_index: usize,
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTrace {
    pub samples: Vec<PosteriorSample>,
}

impl PosteriorTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.samples.first().map_or(0, |s| s.raw.len())
    }
}

fn check_finite(values: &[f32], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Input(format!("{what}: non-finite value at {i}"))),
        None => Ok(()),
    }
}

/// Runs a stack of dense layers; returns the last layer's output.
pub(crate) fn dense_chain(layers: &[crate::model::DenseLayer], input: &[f32]) -> Vec<f32> {
    let mut cur = input.to_vec();
    for l in layers {
        let mut next = vec![0.0f32; l.out_dim()];
        l.forward(&cur, &mut next);
        cur = next;
    }
    cur
}

/// Phone network on one spliced `(context_len * feat_dim)` input.
pub fn phone_forward(model: &TdnnModel, spliced: &[f32]) -> Result<Vec<f32>> {
    let p = model.phone_nn();
    if spliced.len() != p.input_dim() {
        return Err(Error::shape(
            "phone_forward input",
            p.input_dim(),
            spliced.len(),
        ));
    }
    check_finite(spliced, "phone_forward input")?;
    Ok(dense_chain(p.layers(), spliced))
}

/// Elementwise maximum of a window of equally sized vectors.
pub fn pool_max(window: &[&[f32]], expected_len: usize) -> Result<Vec<f32>> {
    if window.len() != expected_len || window.is_empty() {
        return Err(Error::shape("pool_max window", expected_len, window.len()));
    }
    let dim = window[0].len();
    if let Some(v) = window.iter().find(|v| v.len() != dim) {
        return Err(Error::shape("pool_max vector", dim, v.len()));
    }
    Ok(pool_max_unchecked(window.iter().copied(), dim))
}

pub(crate) fn pool_max_unchecked<'a>(
    window: impl Iterator<Item = &'a [f32]>,
    dim: usize,
) -> Vec<f32> {
    let mut out = vec![f32::NEG_INFINITY; dim];
    for v in window {
        for (o, x) in out.iter_mut().zip(v) {
            if *x > *o {
                *o = *x;
            }
        }
    }
    out
}

/// Numerically stable softmax, computed in f64.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &z| m.max(z as f64));
    let exps: Vec<f64> = logits.iter().map(|&z| (z as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Word network plus softmax on one flattened pooled window.
pub fn word_forward(model: &TdnnModel, pooled_window: &[f32]) -> Result<Vec<f64>> {
    let w = model.word_nn();
    if pooled_window.len() != w.input_dim() {
        return Err(Error::shape(
            "word_forward input",
            w.input_dim(),
            pooled_window.len(),
        ));
    }
    check_finite(pooled_window, "word_forward input")?;
    Ok(softmax(&dense_chain(w.layers(), pooled_window)))
}

pub(crate) fn frame_to_f32(frame: &FeatureFrame, feat_dim: usize) -> Result<Vec<f32>> {
    if frame.values.len() != feat_dim {
        return Err(Error::shape("feature frame", feat_dim, frame.values.len()));
    }
    if let Some(i) = frame.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!(
            "frame {}: non-finite feature at dim {i}",
            frame.index
        )));
    }
    Ok(frame.values.iter().map(|&v| v as f32).collect())
}

/// Whole-sequence evaluation without incremental caching. Features must
/// already be normalized. Sequences shorter than the receptive field give an
/// empty trace.
pub fn batch_forward(
    model: &TdnnModel,
    features: &[FeatureFrame],
    skip: SkipMode,
) -> Result<PosteriorTrace> {
    batch_forward_with(model, features, skip, DEFAULT_SMOOTHING_WIDTH)
}

pub fn batch_forward_with(
    model: &TdnnModel,
    features: &[FeatureFrame],
    skip: SkipMode,
    smoothing_width: usize,
) -> Result<PosteriorTrace> {
    let g = Geometry::new(model, skip)?;
    let flat: Vec<f32> = features
        .iter()
        .map(|f| frame_to_f32(f, g.feat_dim))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let num_words = g.num_word_outputs(features.len());
    if num_words == 0 {
        return Ok(PosteriorTrace::default());
    }

    let num_phone = g.num_phone_evals(features.len());
    let row = g.context_len * g.feat_dim;
    let mut phone = vec![0.0f32; num_phone * g.phone_dim];
    par::for_each_row(&mut phone, g.phone_dim, |i, out| {
        let start = i * g.stride * g.feat_dim;
        out.copy_from_slice(&dense_chain(
            model.phone_nn().layers(),
            &flat[start..start + row],
        ));
    });
    let phone_row = |i: usize| &phone[i * g.phone_dim..(i + 1) * g.phone_dim];

    let pooled: Vec<Vec<f32>> = (0..num_phone)
        .map(|i| {
            if i + 1 < g.pool_count {
                Vec::new()
            } else {
                pool_max_unchecked((i + 1 - g.pool_count..=i).map(phone_row), g.phone_dim)
            }
        })
        .collect();

    let first = g.first_word_index();
    let raw: Vec<Vec<f64>> = par::map_range(num_words, |k| {
        let i = first + k;
        let input: Vec<f32> = (0..g.pooled_context)
            .rev()
            .flat_map(|q| pooled[i - q * g.pooled_spacing].iter().copied())
            .collect();
        softmax(&dense_chain(model.word_nn().layers(), &input))
    });
    let smoothed = smooth_scores(&raw, smoothing_width);
    let samples = raw
        .into_iter()
        .zip(smoothed)
        .enumerate()
        .map(|(k, (raw, smoothed))| PosteriorSample {
            frame_index: g.output_frame(first + k),
            raw,
            smoothed,
        })
        .collect();
    Ok(PosteriorTrace { samples })
}

//! Minibatch SGD for the two training stages.
//!
//! The phone stage fits the phone network (with its last layer as a softmax
//! head) on frame-labelled data. The word stage fine-tunes the whole model
//! on keyword labels, sampling runs of consecutive word outputs so that the
//! phone vectors inside each run are computed once.

mod net;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use net::{
    loss_and_gradients, phone_pass, word_batch, word_pass, Batch, Dense, Grads, LayerGrad, Net,
    PassResult, Real, Segment,
};

use crate::error::{Error, Result};
use crate::eval::KeywordSpan;
use crate::features::FeatureFrame;
use crate::inference::{Geometry, SkipMode};
use crate::model::TdnnModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Examples (phone frames or word outputs) per SGD step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub freeze_phone_nn: bool,
    /// Consecutive word outputs sharing one segment in the word stage.
    pub segment_outputs: usize,
    /// Caps the steps per epoch; `None` makes one pass over the data.
    pub steps_per_epoch: Option<usize>,
    pub skip: SkipMode,
    /// Rescales each mean gradient to at most this Euclidean norm. `None`
    /// leaves plain SGD.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl TrainConfig {
    /// Word-stage defaults: rate 0.01 with each step clipped to norm 5.
    pub fn word_default() -> Self {
        Self {
            learning_rate: 0.01,
            max_grad_norm: Some(5.0),
            ..Self::default()
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            freeze_phone_nn: false,
            segment_outputs: 32,
            steps_per_epoch: None,
            skip: SkipMode::None,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "bad learning rate {}",
                self.learning_rate
            )));
        }
        if self
            .max_grad_norm
            .is_some_and(|c| !(c > 0.0 && c.is_finite()))
        {
            return Err(Error::Config("max_grad_norm must be positive".into()));
        }
        if self.batch_size == 0 || self.segment_outputs == 0 || self.steps_per_epoch == Some(0) {
            return Err(Error::Config(
                "batch, segment and step counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One feature sequence with optional frame-level labels. Word labels are
/// indexed by the last frame of the word output they supervise.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledFrameSet {
    pub features: Vec<FeatureFrame>,
    pub phone_labels: Option<Vec<usize>>,
    pub word_labels: Option<Vec<usize>>,
}

impl LabeledFrameSet {
    fn check_labels(&self, labels: &Option<Vec<usize>>, what: &str, bound: usize) -> Result<()> {
        let labels = labels
            .as_ref()
            .ok_or_else(|| Error::Labels(format!("{what} labels missing")))?;
        if labels.len() != self.features.len() {
            return Err(Error::Labels(format!(
                "{} {what} labels for {} frames",
                labels.len(),
                self.features.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= bound) {
            return Err(Error::Labels(format!(
                "{what} label {bad} outside [0, {bound})"
            )));
        }
        Ok(())
    }
}

/// Coverage used by the harness and the CLI: the window must hold the
/// whole keyword, or be filled by it when the keyword is the longer one.
pub const DEFAULT_MIN_COVERAGE: f64 = 1.0;

/// Per-frame word labels: frame `t` gets keyword `k` when the receptive
/// field ending at `t` covers at least `min_coverage` of a span of `k`;
/// otherwise `filler`. Coverage is measured against the shorter of the
/// span and the receptive field. When several spans qualify the
/// best-covered one wins.
///
/// With a coverage below one an output is labelled positive before the
/// keyword has ended, so the model learns to fire on keyword prefixes.
pub fn align_word_labels(
    num_frames: usize,
    spans: &[KeywordSpan],
    receptive_field: usize,
    filler: usize,
    min_coverage: f64,
) -> Vec<usize> {
    let mut labels = vec![filler; num_frames];
    let mut best = vec![0.0f64; num_frames];
    for span in spans {
        let len = span.end_frame.saturating_sub(span.start_frame);
        if len == 0 {
            continue;
        }
        let last = (span.end_frame + receptive_field).min(num_frames);
        for t in span.start_frame..last {
            let lo = (t + 1)
                .saturating_sub(receptive_field)
                .max(span.start_frame);
            let hi = (t + 1).min(span.end_frame);
            let frac = hi.saturating_sub(lo) as f64 / len.min(receptive_field) as f64;
            if frac >= min_coverage && frac > best[t] {
                best[t] = frac;
                labels[t] = span.keyword;
            }
        }
    }
    labels
}

/// Per-epoch training summary, written as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub steps: usize,
    pub examples: usize,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("epoch log serializes")
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: TdnnModel,
    pub log: Vec<EpochLog>,
}

fn to_f32_rows(frames: &[FeatureFrame], dim: usize) -> Result<Array2<f32>> {
    let mut out = Array2::zeros((frames.len(), dim));
    for (mut row, f) in out.outer_iter_mut().zip(frames) {
        if f.values.len() != dim {
            return Err(Error::shape("training features", dim, f.values.len()));
        }
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "frame {}: non-finite feature",
                f.index
            )));
        }
        row.iter_mut()
            .zip(&f.values)
            .for_each(|(r, v)| *r = *v as f32);
    }
    Ok(out)
}

fn divergence(epoch: usize, step: usize, loss: f64) -> Error {
    Error::Divergence { epoch, step, loss }
}

fn epoch_log(
    stage: &str,
    epoch: usize,
    loss: f64,
    correct: usize,
    count: usize,
    steps: usize,
) -> EpochLog {
    EpochLog {
        stage: stage.to_string(),
        epoch,
        loss: loss / count.max(1) as f64,
        accuracy: correct as f64 / count.max(1) as f64,
        steps,
        examples: count,
    }
}

/// Trains the phone network of `model` (all phone layers, last one as the
/// softmax head) on per-frame phone labels. Word layers are untouched.
pub fn train_phone_stage(
    mut model: TdnnModel,
    data: &[LabeledFrameSet],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Trained> {
    config.validate()?;
    let p = model.phone_nn();
    let (ctx, feat, left) = (p.context_len(), p.feat_dim(), p.left_context());
    let num_phones = p.output_dim();
    let mut sets = Vec::with_capacity(data.len());
    let mut positions = Vec::new();
    for (s, set) in data.iter().enumerate() {
        set.check_labels(&set.phone_labels, "phone", num_phones)?;
        sets.push(to_f32_rows(&set.features, feat)?);
        // Window starting at frame w is centred on w + left.
        for w in 0..(set.features.len() + 1).saturating_sub(ctx) {
            positions.push((s, w));
        }
    }
    if positions.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no labelled frame has {ctx} frames of context"
        )));
    }

    let mut net = Net::<f32>::from_model(&model, SkipMode::None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let lr = config.learning_rate as f32;
    let mut log = Vec::new();
    for epoch in 0..config.epochs {
        positions.shuffle(&mut rng);
        let batches = positions.chunks(config.batch_size);
        let steps = config
            .steps_per_epoch
            .map_or(batches.len(), |s| s.min(batches.len()));
        let (mut loss, mut correct, mut count) = (0.0, 0, 0);
        for (step, batch) in positions.chunks(config.batch_size).take(steps).enumerate() {
            let mut inputs = Array2::<f32>::zeros((batch.len(), ctx * feat));
            let mut labels = Vec::with_capacity(batch.len());
            for (mut row, &(s, w)) in inputs.outer_iter_mut().zip(batch) {
                let frames = sets[s].slice(ndarray::s![w..w + ctx, ..]);
                row.iter_mut().zip(frames.iter()).for_each(|(r, v)| *r = *v);
                labels.push(data[s].phone_labels.as_ref().unwrap()[w + left]);
            }
            let res = phone_pass(&net, inputs, &labels, true)
                .map_err(|_| divergence(epoch, step, f64::NAN))?;
            if !res.loss_sum.is_finite() {
                return Err(divergence(epoch, step, res.loss_sum));
            }
            let mut grads = res.grads.unwrap();
            grads.scale(1.0 / res.count as f32);
            if let Some(c) = config.max_grad_norm {
                grads.clip_norm(c);
            }
            net.sgd_step(&grads, lr, false);
            if !net.is_finite() {
                return Err(divergence(epoch, step, res.loss_sum / res.count as f64));
            }
            loss += res.loss_sum;
            correct += res.correct;
            count += res.count;
        }
        let entry = epoch_log("phone", epoch, loss, correct, count, steps);
        on_epoch(&entry);
        log.push(entry);
    }
    net.write_into(&mut model);
    Ok(Trained { model, log })
}

/// Segment layout of one labelled sequence under a geometry.
struct WordSource {
    frames: Array2<f32>,
    labels: Vec<usize>,
    num_outputs: usize,
}

impl WordSource {
    fn new(set: &LabeledFrameSet, g: &Geometry, num_classes: usize) -> Result<Self> {
        set.check_labels(&set.word_labels, "word", num_classes)?;
        Ok(Self {
            frames: to_f32_rows(&set.features, g.feat_dim)?,
            labels: set.word_labels.clone().unwrap(),
            num_outputs: g.num_word_outputs(set.features.len()),
        })
    }

    /// Word outputs `k0..k1` (counted from the first complete output).
    fn segment(&self, g: &Geometry, k0: usize, k1: usize) -> Segment<f32> {
        let first = g.first_word_index();
        let start = k0 * g.stride;
        let end = g.output_frame(first + k1 - 1) + 1;
        Segment {
            frames: self.frames.slice(ndarray::s![start..end, ..]).to_owned(),
            labels: (k0..k1)
                .map(|k| self.labels[g.output_frame(first + k)])
                .collect(),
        }
    }
}

fn tile(num_outputs: usize, len: usize, offset: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut k = 0;
    let mut next = if offset > 0 {
        offset.min(num_outputs)
    } else {
        len.min(num_outputs)
    };
    while k < num_outputs {
        out.push((k, next));
        k = next;
        next = (k + len).min(num_outputs);
    }
    out
}

/// Fine-tunes `model` on keyword labels. Every parameter is trained unless
/// `freeze_phone_nn` is set, in which case phone weights stay bit-identical.
pub fn train_word_stage(
    mut model: TdnnModel,
    data: &[LabeledFrameSet],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Trained> {
    config.validate()?;
    let mut net = Net::<f32>::from_model(&model, config.skip)?;
    let g = net.geometry;
    let sources = data
        .iter()
        .map(|s| WordSource::new(s, &g, model.num_classes()))
        .collect::<Result<Vec<_>>>()?;
    if sources.iter().all(|s| s.num_outputs == 0) {
        return Err(Error::InsufficientData(format!(
            "no sequence reaches the {}-frame receptive field",
            g.receptive_field()
        )));
    }

    let m = config.segment_outputs;
    let per_batch = (config.batch_size / m).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(3);
    let lr = config.learning_rate as f32;
    let mut log = Vec::new();
    for epoch in 0..config.epochs {
        let mut pieces: Vec<(usize, usize, usize)> = Vec::new();
        for (s, src) in sources.iter().enumerate() {
            let offset = rng.gen_range(0..m);
            pieces.extend(
                tile(src.num_outputs, m, offset)
                    .into_iter()
                    .map(|(a, b)| (s, a, b)),
            );
        }
        pieces.shuffle(&mut rng);
        let batches = pieces.chunks(per_batch);
        let steps = config
            .steps_per_epoch
            .map_or(batches.len(), |s| s.min(batches.len()));
        let (mut loss, mut correct, mut count) = (0.0, 0, 0);
        for (step, batch) in pieces.chunks(per_batch).take(steps).enumerate() {
            let segments: Vec<Segment<f32>> = batch
                .iter()
                .map(|&(s, a, b)| sources[s].segment(&g, a, b))
                .collect();
            let res =
                word_batch(&net, &segments, config.freeze_phone_nn, true).map_err(|e| match e {
                    Error::Numeric(_) => divergence(epoch, step, f64::NAN),
                    other => other,
                })?;
            if !res.loss_sum.is_finite() {
                return Err(divergence(epoch, step, res.loss_sum));
            }
            let mut grads = res.grads.unwrap();
            grads.scale(1.0 / res.count as f32);
            if let Some(c) = config.max_grad_norm {
                grads.clip_norm(c);
            }
            net.sgd_step(&grads, lr, config.freeze_phone_nn);
            if !net.is_finite() {
                return Err(divergence(epoch, step, res.loss_sum / res.count as f64));
            }
            loss += res.loss_sum;
            correct += res.correct;
            count += res.count;
        }
        let entry = epoch_log("word", epoch, loss, correct, count, steps);
        on_epoch(&entry);
        log.push(entry);
    }
    net.write_into(&mut model);
    Ok(Trained { model, log })
}

/// Mean word-stage cross-entropy and accuracy of `model` over all labelled
/// word outputs, without updating anything.
pub fn evaluate_word_stage(
    model: &TdnnModel,
    data: &[LabeledFrameSet],
    skip: SkipMode,
) -> Result<(f64, f64)> {
    let net = Net::<f32>::from_model(model, skip)?;
    let g = net.geometry;
    let mut segments = Vec::new();
    for set in data {
        let src = WordSource::new(set, &g, model.num_classes())?;
        for (a, b) in tile(src.num_outputs, 256, 0) {
            segments.push(src.segment(&g, a, b));
        }
    }
    let res = word_batch(&net, &segments, true, false)?;
    Ok((res.mean_loss(), res.correct as f64 / res.count as f64))
}

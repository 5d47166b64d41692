//! Trainable mirror of [`TdnnModel`] with reverse-mode gradients.
//!
//! Parameters are held as ndarray matrices in either `f32` (training) or
//! `f64` (gradient checking). Phone vectors of a word-stage segment are
//! computed once and shared by every word output in it, which is the
//! training-time analogue of the streaming cache.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::inference::{Geometry, SkipMode};
use crate::model::{Activation, DenseLayer, TdnnModel};
use crate::par;

pub trait Real:
    ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + PartialOrd
    + Send
    + Sync
    + std::fmt::Debug
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `in_dim x out_dim`, matching the model's row-major layout.
    pub w: Array2<T>,
    pub b: Array1<T>,
    pub relu: bool,
}

impl<T: Real> Dense<T> {
    pub fn from_layer(l: &DenseLayer) -> Self {
        let conv = |v: &[f32]| v.iter().map(|&x| T::from_f64(x as f64)).collect::<Vec<_>>();
        Self {
            w: Array2::from_shape_vec((l.in_dim(), l.out_dim()), conv(l.weights()))
                .expect("layer weights match their shape"),
            b: Array1::from(conv(l.bias())),
            relu: l.activation() == Activation::Relu,
        }
    }

    fn write_into(&self, l: &mut DenseLayer) {
        let w = self.w.iter().map(|&x| x.to_f64() as f32).collect();
        let b = self.b.iter().map(|&x| x.to_f64() as f32).collect();
        l.set_params(w, b);
    }

    pub fn forward(&self, x: &ArrayView2<T>) -> Array2<T> {
        let mut z = x.dot(&self.w);
        z += &self.b;
        if self.relu {
            z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub dw: Array2<T>,
    pub db: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub phone: Vec<LayerGrad<T>>,
    pub word: Vec<LayerGrad<T>>,
}

fn zero_grads<T: Real>(layers: &[Dense<T>]) -> Vec<LayerGrad<T>> {
    layers
        .iter()
        .map(|l| LayerGrad {
            dw: Array2::zeros(l.w.raw_dim()),
            db: Array1::zeros(l.b.raw_dim()),
        })
        .collect()
}

impl<T: Real> Grads<T> {
    pub fn zeros_like(net: &Net<T>) -> Self {
        Self {
            phone: zero_grads(&net.phone),
            word: zero_grads(&net.word),
        }
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerGrad<T>> {
        self.phone.iter_mut().chain(self.word.iter_mut())
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.layers_mut().zip(other.phone.iter().chain(&other.word)) {
            a.dw += &b.dw;
            a.db += &b.db;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.layers_mut() {
            g.dw.mapv_inplace(|v| v * factor);
            g.db.mapv_inplace(|v| v * factor);
        }
    }

    /// Euclidean norm over every entry, accumulated in f64.
    pub fn l2_norm(&self) -> f64 {
        self.phone
            .iter()
            .chain(&self.word)
            .flat_map(|g| g.dw.iter().chain(g.db.iter()))
            .map(|v| v.to_f64().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the norm is at most `max_norm`; returns the norm before.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.l2_norm();
        if norm > max_norm {
            self.scale(T::from_f64(max_norm / norm));
        }
        norm
    }

    /// Largest absolute entry, for diagnostics.
    pub fn max_abs(&self) -> f64 {
        self.phone
            .iter()
            .chain(&self.word)
            .flat_map(|g| g.dw.iter().chain(g.db.iter()))
            .fold(0.0, |m, v| m.max(v.to_f64().abs()))
    }
}

/// Trainable copy of a model under one evaluation schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Net<T> {
    pub phone: Vec<Dense<T>>,
    pub word: Vec<Dense<T>>,
    pub geometry: Geometry,
}

impl<T: Real> Net<T> {
    pub fn from_model(model: &TdnnModel, skip: SkipMode) -> Result<Self> {
        Ok(Self {
            phone: model
                .phone_nn()
                .layers()
                .iter()
                .map(Dense::from_layer)
                .collect(),
            word: model
                .word_nn()
                .layers()
                .iter()
                .map(Dense::from_layer)
                .collect(),
            geometry: Geometry::new(model, skip)?,
        })
    }

    /// Copies parameters back (rounded to `f32`).
    pub fn write_into(&self, model: &mut TdnnModel) {
        for (d, l) in self.phone.iter().zip(model.phone_nn_mut().layers_mut()) {
            d.write_into(l);
        }
        for (d, l) in self.word.iter().zip(model.word_nn_mut().layers_mut()) {
            d.write_into(l);
        }
    }

    /// `theta -= lr * grad` for every trainable parameter.
    pub fn sgd_step(&mut self, grads: &Grads<T>, lr: T, freeze_phone: bool) {
        let update = |layers: &mut [Dense<T>], gs: &[LayerGrad<T>]| {
            for (l, g) in layers.iter_mut().zip(gs) {
                l.w.zip_mut_with(&g.dw, |w, &d| *w = *w - lr * d);
                l.b.zip_mut_with(&g.db, |b, &d| *b = *b - lr * d);
            }
        };
        if !freeze_phone {
            update(&mut self.phone, &grads.phone);
        }
        update(&mut self.word, &grads.word);
    }

    pub fn is_finite(&self) -> bool {
        self.phone
            .iter()
            .chain(&self.word)
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.to_f64().is_finite()))
    }

    pub fn num_params(&self) -> usize {
        self.phone
            .iter()
            .chain(&self.word)
            .map(|l| l.w.len() + l.b.len())
            .sum()
    }
}

/// Activations of every layer, input first.
fn forward_stack<T: Real>(layers: &[Dense<T>], x: Array2<T>) -> Vec<Array2<T>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x);
    for l in layers {
        let next = l.forward(&acts.last().unwrap().view());
        acts.push(next);
    }
    acts
}

/// Accumulates parameter gradients given `d_top` for the last activation.
/// Returns the input gradient when requested.
fn backward_stack<T: Real>(
    layers: &[Dense<T>],
    acts: &[Array2<T>],
    d_top: Array2<T>,
    grads: &mut [LayerGrad<T>],
    want_input: bool,
) -> Option<Array2<T>> {
    let mut d = d_top;
    for (i, l) in layers.iter().enumerate().rev() {
        if l.relu {
            d.zip_mut_with(&acts[i + 1], |g, &a| {
                if a <= T::zero() {
                    *g = T::zero();
                }
            });
        }
        grads[i].dw += &acts[i].t().dot(&d);
        grads[i].db += &d.sum_axis(Axis(0));
        if i > 0 || want_input {
            d = d.dot(&l.w.t());
        }
    }
    want_input.then_some(d)
}

/// Summed cross-entropy, `softmax - onehot` logits gradient, and the number
/// of rows whose argmax equals the label. Computed in f64.
fn softmax_xent<T: Real>(logits: &Array2<T>, labels: &[usize]) -> Result<(f64, Array2<T>, usize)> {
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    let mut correct = 0;
    for ((row, mut g), &y) in logits.outer_iter().zip(grad.outer_iter_mut()).zip(labels) {
        let z: Vec<f64> = row.iter().map(|v| v.to_f64()).collect();
        if y >= z.len() {
            return Err(Error::Labels(format!(
                "label {y} out of range for {} classes",
                z.len()
            )));
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = max + sum.ln();
        loss += log_sum - z[y];
        for (k, (gk, zk)) in g.iter_mut().zip(&z).enumerate() {
            let p = (zk - log_sum).exp();
            *gk = T::from_f64(if k == y { p - 1.0 } else { p });
        }
        let argmax = z
            .iter()
            .enumerate()
            .fold(0, |best, (k, v)| if *v > z[best] { k } else { best });
        correct += usize::from(argmax == y);
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss {loss} in forward pass"
        )));
    }
    Ok((loss, grad, correct))
}

/// Summed statistics of one forward/backward pass.
#[derive(Debug, Clone)]
pub struct PassResult<T> {
    pub loss_sum: f64,
    pub correct: usize,
    pub count: usize,
    pub grads: Option<Grads<T>>,
}

impl<T: Real> PassResult<T> {
    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.count.max(1) as f64
    }

    /// Sums results in slice order so the total is independent of how the
    /// parts were scheduled.
    pub fn sum(parts: Vec<PassResult<T>>) -> Option<PassResult<T>> {
        let mut iter = parts.into_iter();
        let mut acc = iter.next()?;
        for p in iter {
            acc.loss_sum += p.loss_sum;
            acc.correct += p.correct;
            acc.count += p.count;
            if let (Some(a), Some(b)) = (&mut acc.grads, &p.grads) {
                a.add_assign(b);
            }
        }
        Some(acc)
    }
}

/// Phone-stage pass over spliced windows (`batch x context_len*feat_dim`),
/// with `phone-4` as the softmax head.
pub fn phone_pass<T: Real>(
    net: &Net<T>,
    inputs: Array2<T>,
    labels: &[usize],
    want_grads: bool,
) -> Result<PassResult<T>> {
    if inputs.nrows() != labels.len() {
        return Err(Error::shape(
            "phone batch labels",
            inputs.nrows(),
            labels.len(),
        ));
    }
    let acts = forward_stack(&net.phone, inputs);
    let (loss_sum, d_logits, correct) = softmax_xent(acts.last().unwrap(), labels)?;
    let grads = want_grads.then(|| {
        let mut g = Grads::zeros_like(net);
        backward_stack(&net.phone, &acts, d_logits, &mut g.phone, false);
        g
    });
    Ok(PassResult {
        loss_sum,
        correct,
        count: labels.len(),
        grads,
    })
}

/// A run of consecutive frames and the labels of every word output they
/// produce under the net's geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    /// `num_frames x feat_dim`, standard layout.
    pub frames: Array2<T>,
    pub labels: Vec<usize>,
}

/// Word-stage pass over one segment. Phone parameters receive gradients
/// unless `freeze_phone` is set.
pub fn word_pass<T: Real>(
    net: &Net<T>,
    segment: &Segment<T>,
    freeze_phone: bool,
    want_grads: bool,
) -> Result<PassResult<T>> {
    let g = &net.geometry;
    let n = segment.frames.nrows();
    let num_words = g.num_word_outputs(n);
    if num_words == 0 || num_words != segment.labels.len() {
        return Err(Error::shape(
            "word segment labels",
            num_words,
            segment.labels.len(),
        ));
    }
    if segment.frames.ncols() != g.feat_dim {
        return Err(Error::shape(
            "word segment features",
            g.feat_dim,
            segment.frames.ncols(),
        ));
    }
    let frames = segment.frames.as_standard_layout();
    let flat = frames.as_slice().expect("standard layout");
    let num_phone = g.num_phone_evals(n);
    let row = g.context_len * g.feat_dim;
    let mut spliced = Array2::zeros((num_phone, row));
    for (i, mut r) in spliced.outer_iter_mut().enumerate() {
        let start = i * g.stride * g.feat_dim;
        r.assign(&ndarray::ArrayView1::from(&flat[start..start + row]));
    }
    let phone_acts = forward_stack(&net.phone, spliced);
    let h = phone_acts.last().unwrap();
    let d = g.phone_dim;

    // Pooled row j covers phone rows j ..= j + pool_count - 1.
    let num_pooled = num_phone + 1 - g.pool_count;
    let mut pooled = Array2::zeros((num_pooled, d));
    let mut argmax = vec![0usize; num_pooled * d];
    for j in 0..num_pooled {
        for c in 0..d {
            let mut best = j;
            for r in j + 1..j + g.pool_count {
                if h[[r, c]] > h[[best, c]] {
                    best = r;
                }
            }
            pooled[[j, c]] = h[[best, c]];
            argmax[j * d + c] = best;
        }
    }

    // Word output k reads pooled rows k + q * spacing, oldest first.
    let pc = g.pooled_context;
    let mut word_in = Array2::zeros((num_words, pc * d));
    for (k, mut r) in word_in.outer_iter_mut().enumerate() {
        for q in 0..pc {
            r.slice_mut(ndarray::s![q * d..(q + 1) * d])
                .assign(&pooled.row(k + q * g.pooled_spacing));
        }
    }
    let word_acts = forward_stack(&net.word, word_in);
    let (loss_sum, d_logits, correct) = softmax_xent(word_acts.last().unwrap(), &segment.labels)?;

    let grads = if want_grads {
        let mut grads = Grads::zeros_like(net);
        let d_in = backward_stack(
            &net.word,
            &word_acts,
            d_logits,
            &mut grads.word,
            !freeze_phone,
        );
        if let Some(d_in) = d_in {
            let mut d_pooled = Array2::<T>::zeros((num_pooled, d));
            for (k, r) in d_in.outer_iter().enumerate() {
                for q in 0..pc {
                    let mut dst = d_pooled.row_mut(k + q * g.pooled_spacing);
                    dst += &r.slice(ndarray::s![q * d..(q + 1) * d]);
                }
            }
            let mut d_h = Array2::<T>::zeros((num_phone, d));
            for j in 0..num_pooled {
                for c in 0..d {
                    let src = argmax[j * d + c];
                    d_h[[src, c]] += d_pooled[[j, c]];
                }
            }
            backward_stack(&net.phone, &phone_acts, d_h, &mut grads.phone, false);
        }
        Some(grads)
    } else {
        None
    };
    Ok(PassResult {
        loss_sum,
        correct,
        count: num_words,
        grads,
    })
}

/// Sums word passes over segments (in parallel when enabled).
pub fn word_batch<T: Real>(
    net: &Net<T>,
    segments: &[Segment<T>],
    freeze_phone: bool,
    want_grads: bool,
) -> Result<PassResult<T>> {
    let parts = par::map(segments, |s| word_pass(net, s, freeze_phone, want_grads))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    PassResult::sum(parts).ok_or_else(|| Error::Empty("no segments in batch".into()))
}

/// Training batch for [`loss_and_gradients`].
#[derive(Debug, Clone)]
pub enum Batch<T> {
    Phone {
        inputs: Array2<T>,
        labels: Vec<usize>,
    },
    Word {
        segments: Vec<Segment<T>>,
    },
}

/// Mean cross-entropy over the batch and its gradient.
pub fn loss_and_gradients<T: Real>(
    net: &Net<T>,
    batch: &Batch<T>,
    freeze_phone: bool,
) -> Result<(f64, Grads<T>)> {
    let res = match batch {
        Batch::Phone { inputs, labels } => {
            if labels.is_empty() {
                return Err(Error::Empty("phone batch".into()));
            }
            phone_pass(net, inputs.clone(), labels, true)?
        }
        Batch::Word { segments } => word_batch(net, segments, freeze_phone, true)?,
    };
    let mut grads = res.grads.expect("gradients requested");
    grads.scale(T::from_f64(1.0 / res.count as f64));
    Ok((res.loss_sum / res.count as f64, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> TdnnModel {
        TdnnModel::random(
            &Architecture {
                feat_dim: 3,
                left_context: 1,
                right_context: 1,
                phone_hidden: vec![4],
                phone_outputs: 3,
                pool_size: 2,
                pool_stride: 2,
                pooled_context: 2,
                word_hidden: vec![],
                num_keywords: 2,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn uniform_output_loss_is_ln_k() {
        let mut m = tiny();
        for l in m.word_nn_mut().layers_mut() {
            l.set_params(vec![0.0; l.weight_count()], vec![0.0; l.out_dim()]);
        }
        let net = Net::<f64>::from_model(&m, SkipMode::None).unwrap();
        let n = net.geometry.receptive_field() + 3;
        let seg = Segment {
            frames: Array2::from_elem((n, 3), 0.5),
            labels: vec![1; 4],
        };
        let (loss, _) = loss_and_gradients(
            &net,
            &Batch::Word {
                segments: vec![seg],
            },
            false,
        )
        .unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn round_trip_through_model() {
        let m = tiny();
        let net = Net::<f32>::from_model(&m, SkipMode::None).unwrap();
        let mut m2 = m.clone();
        net.write_into(&mut m2);
        assert_eq!(m, m2);
    }

    #[test]
    fn word_pass_reaches_every_stage() {
        let m = tiny();
        let net = Net::<f64>::from_model(&m, SkipMode::None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = net.geometry.receptive_field();
        let seg = Segment {
            frames: Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0)),
            labels: vec![0],
        };
        let g = word_pass(&net, &seg, false, true).unwrap().grads.unwrap();
        assert!(g.word[0].dw.iter().any(|v| *v != 0.0));
        assert!(g.phone[0].dw.iter().any(|v| *v != 0.0));
        let frozen = word_pass(&net, &seg, true, true).unwrap().grads.unwrap();
        assert!(frozen.phone[0].dw.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sgd_step_is_exact() {
        let m = tiny();
        let mut net = Net::<f64>::from_model(&m, SkipMode::None).unwrap();
        let before = net.clone();
        let mut g = Grads::zeros_like(&net);
        g.word[0].dw.fill(0.5);
        g.phone[0].db.fill(-2.0);
        net.sgd_step(&g, 0.1, false);
        assert_eq!(net.word[0].w, before.word[0].w.mapv(|w| w - 0.1 * 0.5));
        assert_eq!(net.phone[0].b, before.phone[0].b.mapv(|b| b - 0.1 * -2.0));
        let mut frozen = before.clone();
        frozen.sgd_step(&g, 0.1, true);
        assert_eq!(frozen.phone, before.phone);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let net = Net::<f64>::from_model(&tiny(), SkipMode::None).unwrap();
        let mut g = Grads::zeros_like(&net);
        g.word[0].db.fill(3.0);
        let n = g.word[0].db.len() as f64;
        assert!((g.l2_norm() - 3.0 * n.sqrt()).abs() < 1e-12);
        let small = g.clone();
        let before = g.clip_norm(1e6);
        assert_eq!(g, small);
        assert_eq!(before, small.l2_norm());
        g.clip_norm(0.5);
        assert!((g.l2_norm() - 0.5).abs() < 1e-12);
        // Direction is kept.
        let ratio = g.word[0].db[0] / small.word[0].db[0];
        assert!(g.word[0]
            .db
            .iter()
            .zip(&small.word[0].db)
            .all(|(a, b)| (a / b - ratio).abs() < 1e-12));
    }
}

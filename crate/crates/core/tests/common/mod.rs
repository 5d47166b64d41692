//! Reference implementations used by the integration tests and the
//! acceptance runner. Each one recomputes a library result the slow, direct
//! way and shares no code with the code under test.

#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdnn_kws::eval::{GroundTruth, KeywordSpan};
use tdnn_kws::inference::{DetectionEvent, PosteriorSample};
use tdnn_kws::model::Architecture;
use tdnn_kws::training::{loss_and_gradients, Batch, Net, Segment};
use tdnn_kws::{
    FeatureFrame, FeatureNormalizer, FrontendConfig, PosteriorTrace, SkipMode, TdnnModel,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small random shape. Pool strides are multiples of 4 or equal to 1, 2 so
/// every skip mode that divides them can be exercised.
pub fn tiny_architecture(rng: &mut impl Rng) -> Architecture {
    let pool_stride = *[1usize, 2, 4].choose(rng).unwrap();
    Architecture {
        feat_dim: rng.gen_range(2..=8),
        left_context: rng.gen_range(0..=2),
        right_context: rng.gen_range(0..=2),
        phone_hidden: (0..rng.gen_range(0..=2))
            .map(|_| rng.gen_range(2..=6))
            .collect(),
        phone_outputs: rng.gen_range(2..=5),
        pool_size: rng.gen_range(1..=5),
        pool_stride,
        pooled_context: rng.gen_range(1..=4),
        word_hidden: (0..rng.gen_range(0..=1))
            .map(|_| rng.gen_range(2..=6))
            .collect(),
        num_keywords: rng.gen_range(1..=3),
    }
}

/// Random tiny model with random class names and normalizer.
pub fn random_model(seed: u64) -> TdnnModel {
    let mut r = rng(seed);
    let arch = tiny_architecture(&mut r);
    let mut m = TdnnModel::random(&arch, seed).unwrap();
    let names = (0..=arch.num_keywords)
        .map(|i| format!("kw-{}-{}", i, r.gen_range(0..1000)))
        .collect();
    m.set_class_names(names).unwrap();
    let mean = (0..arch.feat_dim).map(|_| r.gen_range(-5.0..5.0)).collect();
    let inv_std = (0..arch.feat_dim).map(|_| r.gen_range(0.1..3.0)).collect();
    m.set_normalizer(FeatureNormalizer::new(mean, inv_std).unwrap())
        .unwrap();
    m
}

/// Skip modes valid for `arch`.
pub fn skip_modes(arch: &Architecture) -> Vec<SkipMode> {
    SkipMode::ALL
        .iter()
        .copied()
        .filter(|s| arch.pool_stride.is_multiple_of(s.stride()))
        .collect()
}

pub fn random_frames(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<FeatureFrame> {
    (0..n)
        .map(|i| FeatureFrame::new(i, (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()))
        .collect()
}

// ---------------------------------------------------------------------------
// Network forward pass, in f64, recomputing every quantity from the input.

fn dense(layer: &tdnn_kws::model::DenseLayer, x: &[f64]) -> Vec<f64> {
    let (i_dim, o_dim) = (layer.in_dim(), layer.out_dim());
    assert_eq!(x.len(), i_dim);
    let w = layer.weights();
    (0..o_dim)
        .map(|o| {
            let z = layer.bias()[o] as f64
                + (0..i_dim)
                    .map(|i| x[i] * w[i * o_dim + o] as f64)
                    .sum::<f64>();
            match layer.activation() {
                tdnn_kws::model::Activation::Relu => z.max(0.0),
                tdnn_kws::model::Activation::Linear => z,
            }
        })
        .collect()
}

fn chain(layers: &[tdnn_kws::model::DenseLayer], x: Vec<f64>) -> Vec<f64> {
    layers.iter().fold(x, |h, l| dense(l, &h))
}

/// Phone vector of the window of input frames starting at `start`.
fn phone_at(model: &TdnnModel, frames: &[FeatureFrame], start: usize) -> Vec<f64> {
    let ctx = model.phone_nn().context_len();
    let spliced: Vec<f64> = frames[start..start + ctx]
        .iter()
        .flat_map(|f| f.values.iter().copied())
        .collect();
    chain(model.phone_nn().layers(), spliced)
}

/// Raw word posteriors, one per word output, with the frame index of the
/// newest input frame each one has seen.
///
/// Under stride `s` the phone network runs on windows starting at multiples
/// of `s`. A pooled vector is the elementwise max over the newest
/// `max(pool_size / s, 1)` phone vectors, and the word network reads
/// `pooled_context` pooled vectors spaced `pool_stride / s` evaluations
/// apart, oldest first.
pub fn naive_raw_posteriors(
    model: &TdnnModel,
    frames: &[FeatureFrame],
    skip: SkipMode,
) -> Vec<(usize, Vec<f64>)> {
    let s = skip.stride();
    let w = model.word_nn();
    let ctx = model.phone_nn().context_len();
    let pool = (w.pool_size() / s).max(1);
    let spacing = w.pool_stride() / s;
    let pc = w.pooled_context();
    let span = (pc - 1) * spacing + pool;
    if frames.len() < ctx {
        return Vec::new();
    }
    let evals = (frames.len() - ctx) / s + 1;
    let mut out = Vec::new();
    for newest in span - 1..evals {
        let mut input = Vec::new();
        for q in (0..pc).rev() {
            let end = newest - q * spacing;
            let mut pooled = phone_at(model, frames, (end + 1 - pool) * s);
            for j in end + 2 - pool..=end {
                let v = phone_at(model, frames, j * s);
                for (p, x) in pooled.iter_mut().zip(v) {
                    *p = p.max(x);
                }
            }
            input.extend(pooled);
        }
        let logits = chain(w.layers(), input);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.push((
            newest * s + ctx - 1,
            exps.iter().map(|e| e / total).collect(),
        ));
    }
    out
}

/// Causal moving average written as an explicit double loop.
pub fn brute_force_smooth(raw: &[Vec<f64>], width: usize) -> Vec<Vec<f64>> {
    let width = width.max(1);
    let mut out = Vec::with_capacity(raw.len());
    for t in 0..raw.len() {
        let lo = (t + 1).saturating_sub(width);
        let k = raw[t].len();
        let mut mean = vec![0.0; k];
        for c in 0..k {
            let mut acc = 0.0;
            for r in &raw[lo..=t] {
                acc += r[c];
            }
            mean[c] = acc / (t + 1 - lo) as f64;
        }
        out.push(mean);
    }
    out
}

// ---------------------------------------------------------------------------
// FBANK via a direct DFT and a separately built filterbank.

pub fn oracle_fbank(samples: &[f32], cfg: &FrontendConfig) -> Vec<Vec<f64>> {
    let n = cfg.frame_len();
    let hop = cfg.hop_len();
    let nfft = cfg.n_fft;
    let sr = cfg.sample_rate as f64;
    let x: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
    let emph: Vec<f64> = (0..x.len())
        .map(|i| {
            if i == 0 {
                x[0]
            } else {
                x[i] - cfg.pre_emphasis * x[i - 1]
            }
        })
        .collect();

    let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
    let inv_mel = |m: f64| 700.0 * ((m / 1127.0).exp() - 1.0);
    let (lo, hi) = (mel(cfg.low_hz), mel(cfg.high_hz()));
    let m = cfg.num_mels;
    let points: Vec<f64> = (0..m + 2)
        .map(|i| inv_mel(lo + (hi - lo) * i as f64 / (m + 1) as f64))
        .collect();
    let bins = nfft / 2 + 1;
    let tri = |j: usize, f: f64| {
        let (a, b, c) = (points[j], points[j + 1], points[j + 2]);
        if f > a && f <= b {
            (f - a) / (b - a)
        } else if f > b && f < c {
            (c - f) / (c - b)
        } else {
            0.0
        }
    };

    let frames = if x.len() < n {
        0
    } else {
        (x.len() - n) / hop + 1
    };
    (0..frames)
        .map(|t| {
            let seg = &emph[t * hop..t * hop + n];
            let power: Vec<f64> = (0..bins)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (i, &s) in seg.iter().enumerate() {
                        let win = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
                        let ang = -2.0 * PI * (k * i) as f64 / nfft as f64;
                        re += s * win * ang.cos();
                        im += s * win * ang.sin();
                    }
                    re * re + im * im
                })
                .collect();
            (0..m)
                .map(|j| {
                    let e: f64 = (0..bins)
                        .map(|k| tri(j, k as f64 * sr / nfft as f64) * power[k])
                        .sum();
                    e.max(cfg.log_floor).ln()
                })
                .collect()
        })
        .collect()
}

/// Trace with bumps of random height so that peaks are plentiful.
pub fn random_trace(r: &mut impl Rng, len: usize, keywords: usize) -> PosteriorTrace {
    let k = keywords + 1;
    let mut level = vec![0.0f64; keywords];
    let samples = (0..len)
        .map(|t| {
            for l in level.iter_mut() {
                *l = (*l * 0.9
                    + if r.gen_bool(0.05) {
                        r.gen_range(0.0..1.0)
                    } else {
                        0.0
                    })
                .min(1.0);
            }
            let total: f64 = level.iter().sum::<f64>() + 1e-3;
            let scale = if total > 1.0 { 1.0 / total } else { 1.0 };
            let mut v: Vec<f64> = level.iter().map(|l| l * scale).collect();
            v.push((1.0 - v.iter().sum::<f64>()).max(0.0));
            debug_assert_eq!(v.len(), k);
            PosteriorSample {
                frame_index: t,
                raw: v.clone(),
                smoothed: v,
            }
        })
        .collect();
    PosteriorTrace { samples }
}

// ---------------------------------------------------------------------------
// Matching.

/// Largest number of (event, span) pairs with the same keyword and
/// `start <= frame < end + tolerance`, each used once, by exhaustive search.
pub fn brute_force_matches(
    events: &[DetectionEvent],
    spans: &[KeywordSpan],
    tolerance: usize,
) -> usize {
    fn go(
        i: usize,
        events: &[DetectionEvent],
        spans: &[KeywordSpan],
        tol: usize,
        used: &mut [bool],
    ) -> usize {
        if i == events.len() {
            return 0;
        }
        let mut best = go(i + 1, events, spans, tol, used);
        let e = &events[i];
        for (j, s) in spans.iter().enumerate() {
            if !used[j]
                && s.keyword == e.keyword_index
                && s.start_frame <= e.frame_index
                && e.frame_index < s.end_frame + tol
            {
                used[j] = true;
                best = best.max(1 + go(i + 1, events, spans, tol, used));
                used[j] = false;
            }
        }
        best
    }
    go(0, events, spans, tolerance, &mut vec![false; spans.len()])
}

/// Random disjoint spans over `0..horizon` and random events, on a small
/// grid so that boundary cases are common.
pub fn random_matching_instance(
    rng: &mut impl Rng,
    max_spans: usize,
    max_events: usize,
    num_keywords: usize,
) -> (Vec<DetectionEvent>, GroundTruth) {
    let num_spans = rng.gen_range(0..=max_spans);
    let mut spans = Vec::new();
    let mut cursor = 0;
    for _ in 0..num_spans {
        let start = cursor + rng.gen_range(0..6);
        let end = start + rng.gen_range(1..8);
        spans.push(KeywordSpan {
            keyword: rng.gen_range(0..num_keywords),
            start_frame: start,
            end_frame: end,
        });
        cursor = end;
    }
    let horizon = cursor + 12;
    let events = (0..rng.gen_range(0..=max_events))
        .map(|_| {
            let k = rng.gen_range(0..num_keywords);
            DetectionEvent {
                keyword_index: k,
                keyword_name: format!("kw{k}"),
                frame_index: rng.gen_range(0..horizon),
                smoothed_score: rng.gen_range(0.0..1.0),
            }
        })
        .collect();
    let truth = GroundTruth::new(spans, horizon as f64 / 100.0).expect("valid spans");
    (events, truth)
}

// ---------------------------------------------------------------------------
// Gradients.

#[derive(Clone, Copy)]
enum Param {
    Weight(usize, usize),
    Bias(usize),
}

fn param_mut(net: &mut Net<f64>, word: bool, layer: usize, p: Param) -> &mut f64 {
    let l = if word {
        &mut net.word[layer]
    } else {
        &mut net.phone[layer]
    };
    match p {
        Param::Weight(r, c) => &mut l.w[[r, c]],
        Param::Bias(o) => &mut l.b[o],
    }
}

/// Worst relative disagreement between analytic gradients and central
/// finite differences over every parameter of `net` on `batch`. The
/// denominator is floored at `floor` so parameters with a vanishing
/// gradient are compared absolutely.
pub fn gradient_check(net: &Net<f64>, batch: &Batch<f64>, step: f64, floor: f64) -> f64 {
    let (_, grads) = loss_and_gradients(net, batch, false).expect("analytic pass");
    let loss = |n: &Net<f64>| {
        loss_and_gradients(n, batch, false)
            .expect("perturbed pass")
            .0
    };
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    let stages = [(false, &grads.phone), (true, &grads.word)];
    for (word, layers) in stages {
        for (li, g) in layers.iter().enumerate() {
            let (rows, cols) = g.dw.dim();
            let params = (0..rows)
                .flat_map(|r| (0..cols).map(move |c| (Param::Weight(r, c), g.dw[[r, c]])))
                .chain(g.db.iter().enumerate().map(|(o, &v)| (Param::Bias(o), v)));
            for (p, analytic) in params {
                let orig = *param_mut(&mut probe, word, li, p);
                *param_mut(&mut probe, word, li, p) = orig + step;
                let up = loss(&probe);
                *param_mut(&mut probe, word, li, p) = orig - step;
                let down = loss(&probe);
                *param_mut(&mut probe, word, li, p) = orig;
                worst = worst.max(rel_err(analytic, (up - down) / (2.0 * step), floor));
            }
        }
    }
    worst
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// A random tiny model with a phone batch and a word batch for it.
pub fn gradient_case(seed: u64) -> (Net<f64>, Batch<f64>, Batch<f64>) {
    let mut r = rng(seed);
    let arch = tiny_architecture(&mut r);
    let model = TdnnModel::random(&arch, seed).expect("tiny model");
    let skips = skip_modes(&arch);
    let skip = *skips.choose(&mut r).unwrap();
    let mut net = Net::<f64>::from_model(&model, skip).expect("net");
    // Zero initial biases put pre-activations exactly on the ReLU kink
    // whenever a whole layer input is zero.
    for l in net.phone.iter_mut().chain(net.word.iter_mut()) {
        l.b.mapv_inplace(|_| r.gen_range(-0.5..0.5));
    }
    let classes = arch.num_keywords + 1;

    let row = arch.context_len() * arch.feat_dim;
    let n_phone = r.gen_range(2..=6);
    let phone = Batch::Phone {
        inputs: Array2::from_shape_fn((n_phone, row), |_| r.gen_range(-2.0..2.0)),
        labels: (0..n_phone)
            .map(|_| r.gen_range(0..arch.phone_outputs))
            .collect(),
    };

    let rf = net.geometry.receptive_field();
    let segments = (0..r.gen_range(1..=3))
        .map(|_| {
            let frames = rf + r.gen_range(0..6) * skip.stride();
            let outputs = net.geometry.num_word_outputs(frames);
            Segment {
                frames: Array2::from_shape_fn((frames, arch.feat_dim), |_| r.gen_range(-2.0..2.0)),
                labels: (0..outputs).map(|_| r.gen_range(0..classes)).collect(),
            }
        })
        .collect();
    (net, phone, Batch::Word { segments })
}

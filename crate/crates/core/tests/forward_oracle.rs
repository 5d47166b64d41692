mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use tdnn_kws::inference::{detect_events, DEFAULT_SMOOTHING_WIDTH};
use tdnn_kws::{batch_forward, SkipMode, StreamState, TdnnModel, TriggerConfig};

/// The library evaluates in f32, the oracle in f64.
const POSTERIOR_TOL: f64 = 1e-5;
const SMOOTHING_TOL: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-5;

#[test]
fn batch_forward_matches_direct_evaluation_on_tiny_models() {
    for seed in 0..60 {
        let mut r = common::rng(seed);
        let arch = common::tiny_architecture(&mut r);
        let model = TdnnModel::random(&arch, seed).unwrap();
        for skip in common::skip_modes(&arch) {
            let n = r.gen_range(0..60);
            let frames = common::random_frames(n, arch.feat_dim, &mut r);
            let trace = batch_forward(&model, &frames, skip).unwrap();
            let oracle = common::naive_raw_posteriors(&model, &frames, skip);
            assert_eq!(trace.len(), oracle.len(), "seed {seed} {skip:?}");
            for (s, (frame, p)) in trace.samples.iter().zip(&oracle) {
                assert_eq!(s.frame_index, *frame);
                for (a, b) in s.raw.iter().zip(p) {
                    assert!((a - b).abs() < POSTERIOR_TOL, "seed {seed}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn default_model_matches_direct_evaluation() {
    let model = TdnnModel::build_default(2, 7).unwrap();
    let mut r = common::rng(7);
    for skip in SkipMode::ALL {
        let frames = common::random_frames(model.receptive_field() + 12, 41, &mut r);
        let trace = batch_forward(&model, &frames, skip).unwrap();
        let oracle = common::naive_raw_posteriors(&model, &frames, skip);
        assert!(!oracle.is_empty());
        assert_eq!(trace.len(), oracle.len());
        for (s, (frame, p)) in trace.samples.iter().zip(&oracle) {
            assert_eq!(s.frame_index, *frame);
            for (a, b) in s.raw.iter().zip(p) {
                assert!((a - b).abs() < POSTERIOR_TOL);
            }
        }
    }
}

#[test]
fn smoothed_scores_match_the_double_loop() {
    let model = TdnnModel::build_default(3, 1).unwrap();
    let frames = common::random_frames(200, 41, &mut common::rng(1));
    let trace = batch_forward(&model, &frames, SkipMode::None).unwrap();
    let raw: Vec<Vec<f64>> = trace.samples.iter().map(|s| s.raw.clone()).collect();
    let oracle = common::brute_force_smooth(&raw, DEFAULT_SMOOTHING_WIDTH);
    for (s, o) in trace.samples.iter().zip(&oracle) {
        for (a, b) in s.smoothed.iter().zip(o) {
            assert!((a - b).abs() < SMOOTHING_TOL);
        }
    }
}

fn tiny_case(seed: u64) -> (TdnnModel, SkipMode, Vec<tdnn_kws::FeatureFrame>, Vec<usize>) {
    let mut r = common::rng(seed);
    let arch = common::tiny_architecture(&mut r);
    let model = TdnnModel::random(&arch, seed).unwrap();
    let skip = *common::skip_modes(&arch).choose(&mut r).unwrap();
    let n = r.gen_range(0..120);
    let frames = common::random_frames(n, arch.feat_dim, &mut r);
    let mut cuts = Vec::new();
    let mut at = 0;
    while at < n {
        let len = r.gen_range(1..=17).min(n - at);
        cuts.push(len);
        at += len;
    }
    (model, skip, frames, cuts)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn streaming_equals_batch_for_any_chunking(seed in any::<u64>()) {
        let (model, skip, frames, cuts) = tiny_case(seed);
        let batch = batch_forward(&model, &frames, skip).unwrap();
        let mut state = StreamState::new(&model, skip, TriggerConfig::new(0.5)).unwrap();
        let mut samples = Vec::new();
        let mut at = 0;
        for len in cuts {
            let (s, _) = state.push_frames(&model, &frames[at..at + len]).unwrap();
            samples.extend(s);
            at += len;
        }
        prop_assert_eq!(samples.len(), batch.len());
        for (a, b) in samples.iter().zip(&batch.samples) {
            prop_assert_eq!(a.frame_index, b.frame_index);
            for (x, y) in a.raw.iter().zip(&b.raw).chain(a.smoothed.iter().zip(&b.smoothed)) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn posteriors_stay_on_the_simplex(seed in any::<u64>()) {
        let (model, skip, frames, _) = tiny_case(seed);
        let trace = batch_forward(&model, &frames, skip).unwrap();
        for s in &trace.samples {
            for v in [&s.raw, &s.smoothed] {
                prop_assert!(v.iter().all(|p| (0.0..=1.0).contains(p)));
                prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < SIMPLEX_TOL);
            }
        }
    }

    #[test]
    fn no_output_before_the_receptive_field(seed in any::<u64>()) {
        let (model, skip, frames, _) = tiny_case(seed);
        let trace = batch_forward(&model, &frames, skip).unwrap();
        let rf = tdnn_kws::inference::Geometry::new(&model, skip).unwrap().receptive_field();
        if let Some(first) = trace.samples.first() {
            prop_assert_eq!(first.frame_index, rf - 1);
        } else {
            prop_assert!(frames.len() < rf);
        }
    }

    #[test]
    fn higher_thresholds_never_add_events(seed in any::<u64>(), lo in 0.0f64..1.0, gap in 0.0f64..0.5) {
        let (model, skip, frames, _) = tiny_case(seed);
        let trace = batch_forward(&model, &frames, skip).unwrap();
        let names = model.class_names();
        let low = detect_events(&trace, names, &TriggerConfig::new(lo));
        let high = detect_events(&trace, names, &TriggerConfig::new((lo + gap).min(1.0)));
        prop_assert!(high.len() <= low.len());
        prop_assert!(high.iter().all(|e| e.smoothed_score >= lo + gap.min(1.0 - lo) - 1e-15));
    }

    #[test]
    fn traces_are_reproducible(seed in any::<u64>()) {
        let (model, skip, frames, _) = tiny_case(seed);
        prop_assert_eq!(
            batch_forward(&model, &frames, skip).unwrap(),
            batch_forward(&model, &frames, skip).unwrap()
        );
    }
}

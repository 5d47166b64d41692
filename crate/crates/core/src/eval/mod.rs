//! Detection metrics, dataset construction and the synthetic benchmark.

pub mod dataset;
pub mod harness;
mod metrics;
mod mix;
pub mod synth;

pub use metrics::{
    candidate_thresholds, classify_trace, classify_utterance, match_counts, peak_candidates,
    roc_sweep, roc_sweep_many, score_detections, DetectionCounts, DetectionScore, GroundTruth,
    KeywordSpan, RocCurve, RocPoint, ScoredStream, DEFAULT_TOLERANCE_FRAMES,
};
pub use mix::{
    db_to_gain, make_derivative_stream, mix_noise, pink_noise, sample_span_to_frames, snr_db,
    white_noise, DerivativeStream, LabeledClip, MixResult, MixSpec, Placement,
};

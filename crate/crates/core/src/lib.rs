//! Streaming two-stage time-delay neural network keyword spotter.
//!
//! Audio is turned into 41-dimensional log mel filterbank frames
//! ([`features`]), a phone network classifies spliced frame windows, and a
//! word network consumes max-pooled phone outputs to produce per-frame
//! keyword posteriors ([`model`], [`inference`]). [`cost`] counts
//! multiplications per second, [`training`] fits both stages and [`eval`]
//! computes detection metrics and runs the synthetic benchmark harness.

pub mod audio;
pub mod cost;
pub mod error;
pub mod eval;
pub mod features;
pub mod inference;
pub mod model;
pub mod par;
pub mod training;

pub use audio::AudioStream;
pub use error::{Error, FormatError, Result};
pub use features::{extract_fbank, FeatureFrame, FeatureNormalizer, FrontendConfig};
pub use inference::{batch_forward, PosteriorTrace, SkipMode, StreamState, TriggerConfig};
pub use model::TdnnModel;

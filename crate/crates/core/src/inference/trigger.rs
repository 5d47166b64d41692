//! Threshold trigger over smoothed keyword scores.
//!
//! An output fires for keyword `k` when its smoothed score is at least the
//! threshold and is a suppression-window peak: strictly above every score
//! of `k` in the preceding `suppression_frames` frames and no lower than
//! every score in the following `suppression_frames` frames. The peak
//! condition does not depend on the threshold, so the events at a higher
//! threshold are always a subset of the events at a lower one. Two events
//! for the same keyword are always more than `suppression_frames` apart.
//! In streaming use an event is reported once its look-ahead window has
//! been observed.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{PosteriorSample, PosteriorTrace};

/// The default receptive field. A keyword keeps its score high for about
/// that many outputs, so a narrower radius splits one utterance into
/// several events.
pub const DEFAULT_SUPPRESSION_FRAMES: usize = 79;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub threshold: f64,
    pub suppression_frames: usize,
}

impl TriggerConfig {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            suppression_frames: DEFAULT_SUPPRESSION_FRAMES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub keyword_index: usize,
    pub keyword_name: String,
    pub frame_index: usize,
    pub smoothed_score: f64,
}

impl DetectionEvent {
    /// JSON-lines record `{keyword, frame, time_s, score}`, with the time
    /// rounded to the microsecond.
    pub fn to_json(&self, hop_seconds: f64) -> serde_json::Value {
        let time_s = (self.frame_index as f64 * hop_seconds * 1e6).round() / 1e6;
        serde_json::json!({
            "keyword": self.keyword_name,
            "frame": self.frame_index,
            "time_s": time_s,
            "score": self.smoothed_score,
        })
    }
}

/// Peak test for sample `idx`, class `k`, over a frame-ordered window.
fn is_peak<'a, F>(len: usize, at: F, idx: usize, k: usize, radius: usize) -> bool
where
    F: Fn(usize) -> &'a PosteriorSample,
{
    let centre = at(idx);
    let (frame, score) = (centre.frame_index, centre.smoothed[k]);
    let earlier = (0..idx)
        .rev()
        .map(&at)
        .take_while(|s| frame - s.frame_index <= radius);
    for s in earlier {
        if s.smoothed[k] >= score {
            return false;
        }
    }
    let later = (idx + 1..len)
        .map(&at)
        .take_while(|s| s.frame_index - frame <= radius);
    for s in later {
        if s.smoothed[k] > score {
            return false;
        }
    }
    true
}

fn events_at<'a, F>(
    len: usize,
    at: F,
    idx: usize,
    class_names: &[String],
    trigger: &TriggerConfig,
    out: &mut Vec<DetectionEvent>,
) where
    F: Fn(usize) -> &'a PosteriorSample + Copy,
{
    let sample = at(idx);
    let num_keywords = sample.smoothed.len().saturating_sub(1);
    for k in 0..num_keywords {
        let score = sample.smoothed[k];
        if score >= trigger.threshold && is_peak(len, at, idx, k, trigger.suppression_frames) {
            out.push(DetectionEvent {
                keyword_index: k,
                keyword_name: class_names
                    .get(k)
                    .cloned()
                    .unwrap_or_else(|| format!("keyword_{k}")),
                frame_index: sample.frame_index,
                smoothed_score: score,
            });
        }
    }
}

/// All events on a complete trace, ordered by frame then keyword.
pub fn detect_events(
    trace: &PosteriorTrace,
    class_names: &[String],
    trigger: &TriggerConfig,
) -> Vec<DetectionEvent> {
    let samples = &trace.samples;
    let mut out = Vec::new();
    for idx in 0..samples.len() {
        events_at(
            samples.len(),
            |i| &samples[i],
            idx,
            class_names,
            trigger,
            &mut out,
        );
    }
    out
}

/// Streaming counterpart of [`detect_events`].
#[derive(Debug, Clone)]
pub struct PeakPicker {
    trigger: TriggerConfig,
    history: VecDeque<PosteriorSample>,
    /// Index into `history` of the oldest sample not yet decided.
    next: usize,
}

impl PeakPicker {
    pub fn new(trigger: TriggerConfig) -> Self {
        Self {
            trigger,
            history: VecDeque::new(),
            next: 0,
        }
    }

    pub fn trigger(&self) -> &TriggerConfig {
        &self.trigger
    }

    pub fn push(&mut self, sample: PosteriorSample, class_names: &[String]) -> Vec<DetectionEvent> {
        let newest = sample.frame_index;
        self.history.push_back(sample);
        let radius = self.trigger.suppression_frames;
        let mut out = Vec::new();
        while self.next < self.history.len()
            && self.history[self.next].frame_index + radius <= newest
        {
            self.decide_next(class_names, &mut out);
        }
        self.prune();
        out
    }

    /// Decides every pending sample as if the stream ended here.
    pub fn finish(&mut self, class_names: &[String]) -> Vec<DetectionEvent> {
        let mut out = Vec::new();
        while self.next < self.history.len() {
            self.decide_next(class_names, &mut out);
        }
        self.prune();
        out
    }

    pub fn reset(&mut self) {
        self.history.clear();
        self.next = 0;
    }

    fn decide_next(&mut self, class_names: &[String], out: &mut Vec<DetectionEvent>) {
        let h = &self.history;
        events_at(
            h.len(),
            |i| &h[i],
            self.next,
            class_names,
            &self.trigger,
            out,
        );
        self.next += 1;
    }

    fn prune(&mut self) {
        let Some(pending) = self.history.get(self.next).or(self.history.back()) else {
            return;
        };
        let keep_from = pending
            .frame_index
            .saturating_sub(self.trigger.suppression_frames);
        while self
            .history
            .front()
            .is_some_and(|s| s.frame_index < keep_from)
        {
            self.history.pop_front();
            self.next -= 1;
        }
    }
}

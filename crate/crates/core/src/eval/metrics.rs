use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureFrame;
use crate::inference::{
    batch_forward, detect_events, DetectionEvent, PosteriorTrace, SkipMode, TriggerConfig,
};
use crate::model::TdnnModel;

/// Frames past the end of a span during which a detection still counts.
pub const DEFAULT_TOLERANCE_FRAMES: usize = 50;

/// Occurrence of keyword `keyword` over frames `start_frame..end_frame`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSpan {
    pub keyword: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spans: Vec<KeywordSpan>,
    pub total_audio_seconds: f64,
}

impl GroundTruth {
    /// Sorts spans by start and checks they are nonempty and disjoint.
    pub fn new(mut spans: Vec<KeywordSpan>, total_audio_seconds: f64) -> Result<Self> {
        if !(total_audio_seconds >= 0.0 && total_audio_seconds.is_finite()) {
            return Err(Error::Input(format!(
                "bad audio duration {total_audio_seconds}"
            )));
        }
        spans.sort_by_key(|s| (s.start_frame, s.end_frame));
        for s in &spans {
            if s.end_frame <= s.start_frame {
                return Err(Error::Input(format!("empty span {s:?}")));
            }
        }
        for w in spans.windows(2) {
            if w[1].start_frame < w[0].end_frame {
                return Err(Error::Input(format!(
                    "overlapping spans {:?} and {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self {
            spans,
            total_audio_seconds,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: GroundTruth = serde_json::from_str(text)
            .map_err(|e| Error::Input(format!("ground truth json: {e}")))?;
        Self::new(raw.spans, raw.total_audio_seconds)
    }
}

/// Raw counts behind FRR and FA/hr; additive across streams.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub num_spans: usize,
    pub missed: usize,
    pub num_events: usize,
    pub false_alarms: usize,
    pub audio_seconds: f64,
}

impl DetectionCounts {
    pub fn add(&mut self, other: &DetectionCounts) {
        self.num_spans += other.num_spans;
        self.missed += other.missed;
        self.num_events += other.num_events;
        self.false_alarms += other.false_alarms;
        self.audio_seconds += other.audio_seconds;
    }

    /// Percentage of spans without a matching event; 0 when there are none.
    pub fn frr_percent(&self) -> f64 {
        if self.num_spans == 0 {
            0.0
        } else {
            100.0 * self.missed as f64 / self.num_spans as f64
        }
    }

    pub fn fa_per_hour(&self) -> Result<f64> {
        if self.audio_seconds <= 0.0 {
            return Err(Error::UndefinedRate(
                "false alarms per hour of zero-length audio".into(),
            ));
        }
        Ok(self.false_alarms as f64 * 3600.0 / self.audio_seconds)
    }
}

/// Maximum matching between events and spans. An event can match a span of
/// the same keyword when `start <= frame < end + tolerance`; each span and
/// each event is used at most once.
pub fn match_counts(
    events: &[DetectionEvent],
    truth: &GroundTruth,
    tolerance_frames: usize,
) -> DetectionCounts {
    let mut order: Vec<&DetectionEvent> = events.iter().collect();
    order.sort_by_key(|e| e.frame_index);
    let mut used = vec![false; truth.spans.len()];
    let mut matched = 0;
    for e in order {
        // Spans are sorted and disjoint, so deadlines increase with start:
        // the first open candidate has the earliest deadline.
        let pick = truth.spans.iter().enumerate().position(|(i, s)| {
            !used[i]
                && s.keyword == e.keyword_index
                && s.start_frame <= e.frame_index
                && e.frame_index < s.end_frame + tolerance_frames
        });
        if let Some(i) = pick {
            used[i] = true;
            matched += 1;
        }
    }
    DetectionCounts {
        num_spans: truth.spans.len(),
        missed: truth.spans.len() - matched,
        num_events: events.len(),
        false_alarms: events.len() - matched,
        audio_seconds: truth.total_audio_seconds,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub frr_percent: f64,
    pub fa_per_hour: f64,
    pub counts: DetectionCounts,
}

pub fn score_detections(
    events: &[DetectionEvent],
    truth: &GroundTruth,
    tolerance_frames: usize,
) -> Result<DetectionScore> {
    let counts = match_counts(events, truth, tolerance_frames);
    Ok(DetectionScore {
        frr_percent: counts.frr_percent(),
        fa_per_hour: counts.fa_per_hour()?,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub frr_percent: f64,
    pub fa_per_hour: f64,
}

/// Points ordered by decreasing threshold.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// FRR at a false-alarm rate, interpolating linearly between the last
    /// point at or below `fa_per_hour` and the first point above it. Below
    /// every point the curve starts from (0 FA/hr, 100% FRR); when every
    /// point is at or below the target the lowest FRR is returned.
    pub fn frr_at(&self, fa_per_hour: f64) -> f64 {
        let mut lo = (0.0, 100.0);
        let mut hi = None;
        for p in &self.points {
            if p.fa_per_hour <= fa_per_hour {
                if p.fa_per_hour > lo.0 || p.frr_percent < lo.1 {
                    lo = (p.fa_per_hour, p.frr_percent.min(lo.1));
                }
            } else if hi.is_none() {
                hi = Some((p.fa_per_hour, p.frr_percent));
            }
        }
        match hi {
            Some((fa_hi, frr_hi)) => {
                let t = (fa_per_hour - lo.0) / (fa_hi - lo.0);
                lo.1 + t * (frr_hi - lo.1)
            }
            None => self
                .points
                .iter()
                .map(|p| p.frr_percent)
                .fold(lo.1, f64::min),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "threshold,frr,fa_per_hour")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.threshold, p.frr_percent, p.fa_per_hour)?;
        }
        w.flush()
    }
}

/// Trigger events at the lowest threshold; the events at any threshold are
/// exactly those with `smoothed_score >= threshold`.
pub fn peak_candidates(
    trace: &PosteriorTrace,
    class_names: &[String],
    suppression_frames: usize,
) -> Vec<DetectionEvent> {
    let trigger = TriggerConfig {
        threshold: f64::NEG_INFINITY,
        suppression_frames,
    };
    detect_events(trace, class_names, &trigger)
}

/// One scored stream for [`roc_sweep_many`].
#[derive(Debug, Clone)]
pub struct ScoredStream<'a> {
    pub trace: &'a PosteriorTrace,
    pub truth: &'a GroundTruth,
}

/// Distinct candidate scores across streams, descending, headed by a value
/// above every score so the curve starts with no detections.
pub fn candidate_thresholds(
    streams: &[ScoredStream<'_>],
    class_names: &[String],
    suppression_frames: usize,
) -> Vec<f64> {
    let mut scores: Vec<f64> = streams
        .iter()
        .flat_map(|s| peak_candidates(s.trace, class_names, suppression_frames))
        .map(|e| e.smoothed_score)
        .collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.dedup();
    let top = scores.first().map_or(1.0, |s| s.max(1.0));
    std::iter::once(top + 1e-9).chain(scores).collect()
}

/// ROC over several streams, pooling counts per threshold. Thresholds must
/// be sorted in decreasing order.
pub fn roc_sweep_many(
    streams: &[ScoredStream<'_>],
    class_names: &[String],
    thresholds: &[f64],
    trigger: &TriggerConfig,
    tolerance_frames: usize,
) -> Result<RocCurve> {
    if streams.is_empty() || streams.iter().all(|s| s.trace.is_empty()) {
        return Err(Error::Empty("roc sweep over an empty trace".into()));
    }
    if thresholds.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Input(
            "thresholds must be sorted in decreasing order".into(),
        ));
    }
    let candidates: Vec<Vec<DetectionEvent>> = streams
        .iter()
        .map(|s| peak_candidates(s.trace, class_names, trigger.suppression_frames))
        .collect();
    let mut points = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let mut total = DetectionCounts::default();
        for (s, cand) in streams.iter().zip(&candidates) {
            let events: Vec<DetectionEvent> = cand
                .iter()
                .filter(|e| e.smoothed_score >= threshold)
                .cloned()
                .collect();
            total.add(&match_counts(&events, s.truth, tolerance_frames));
        }
        points.push(RocPoint {
            threshold,
            frr_percent: total.frr_percent(),
            fa_per_hour: total.fa_per_hour()?,
        });
    }
    Ok(RocCurve { points })
}

pub fn roc_sweep(
    trace: &PosteriorTrace,
    class_names: &[String],
    truth: &GroundTruth,
    thresholds: &[f64],
) -> Result<RocCurve> {
    roc_sweep_many(
        &[ScoredStream { trace, truth }],
        class_names,
        thresholds,
        &TriggerConfig::new(0.0),
        DEFAULT_TOLERANCE_FRAMES,
    )
}

/// Class of an isolated clip from its trace: the keyword whose maximum
/// smoothed score is highest, or `filler` unless that score exceeds
/// `threshold`.
pub fn classify_trace(trace: &PosteriorTrace, threshold: f64, filler: usize) -> usize {
    let mut best = (filler, f64::NEG_INFINITY);
    for s in &trace.samples {
        for (k, &v) in s.smoothed.iter().enumerate().take(filler) {
            if v > best.1 {
                best = (k, v);
            }
        }
    }
    if best.1 > threshold {
        best.0
    } else {
        filler
    }
}

/// Runs the model over normalized clip features and classifies the clip.
/// Clips shorter than the receptive field are classified as filler.
pub fn classify_utterance(
    model: &TdnnModel,
    features: &[FeatureFrame],
    threshold: f64,
    skip: SkipMode,
) -> Result<usize> {
    let trace = batch_forward(model, features, skip)?;
    if trace.is_empty() {
        log::warn!(
            "clip of {} frames is shorter than the {}-frame context; classified as filler",
            features.len(),
            model.receptive_field()
        );
    }
    Ok(classify_trace(&trace, threshold, model.filler_index()))
}

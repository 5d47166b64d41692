use crate::cost::MulCounter;
use crate::error::Result;
use crate::features::FeatureFrame;
use crate::model::TdnnModel;

use super::ring::Ring;
use super::smoothing::window_mean;
use super::trigger::{DetectionEvent, PeakPicker, TriggerConfig};
use super::{
    dense_chain, frame_to_f32, pool_max_unchecked, softmax, Geometry, PosteriorSample, SkipMode,
    DEFAULT_SMOOTHING_WIDTH,
};

/// Result of pushing one feature frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    /// Present when this frame completed a word output.
    pub sample: Option<PosteriorSample>,
    /// Events whose look-ahead window closed at this frame.
    pub events: Vec<DetectionEvent>,
}

/// Incremental evaluation state for one audio stream.
///
/// Only the newest phone vector is computed per evaluated frame; earlier
/// ones are reused from the rings. The phone ring holds the vectors of one
/// pooling window and the pooled ring holds the span covered by one word
/// input, so memory stays constant in the stream length.
#[derive(Debug, Clone)]
pub struct StreamState {
    geometry: Geometry,
    skip: SkipMode,
    feature_ring: Ring<Vec<f32>>,
    phone_ring: Ring<Vec<f32>>,
    pooled_ring: Ring<Vec<f32>>,
    score_ring: Ring<Vec<f64>>,
    picker: PeakPicker,
    frame_counter: usize,
    /// Frame counter value at which the current skip schedule started.
    phase_origin: usize,
    counter: Option<MulCounter>,
}

impl StreamState {
    pub fn new(model: &TdnnModel, skip: SkipMode, trigger: TriggerConfig) -> Result<Self> {
        Self::with_smoothing(model, skip, trigger, DEFAULT_SMOOTHING_WIDTH)
    }

    pub fn with_smoothing(
        model: &TdnnModel,
        skip: SkipMode,
        trigger: TriggerConfig,
        smoothing_width: usize,
    ) -> Result<Self> {
        let g = Geometry::new(model, skip)?;
        Ok(Self {
            geometry: g,
            skip,
            feature_ring: Ring::new(g.context_len),
            phone_ring: Ring::new(g.pool_count),
            pooled_ring: Ring::new((g.pooled_context - 1) * g.pooled_spacing + 1),
            score_ring: Ring::new(smoothing_width.max(1)),
            picker: PeakPicker::new(trigger),
            frame_counter: 0,
            phase_origin: 0,
            counter: None,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn skip_mode(&self) -> SkipMode {
        self.skip
    }

    pub fn frame_counter(&self) -> usize {
        self.frame_counter
    }

    pub fn trigger(&self) -> &TriggerConfig {
        self.picker.trigger()
    }

    /// Starts counting multiplications from the next pushed frame.
    pub fn enable_mul_counter(&mut self) {
        self.counter = Some(MulCounter::new());
    }

    pub fn mul_counter(&self) -> Option<&MulCounter> {
        self.counter.as_ref()
    }

    pub fn push_frame(&mut self, model: &TdnnModel, frame: &FeatureFrame) -> Result<StepOutput> {
        let g = self.geometry;
        let values = frame_to_f32(frame, g.feat_dim)?;
        let frame_index = self.frame_counter;
        self.frame_counter += 1;
        if let Some(c) = &mut self.counter {
            c.record_frame();
        }
        self.feature_ring.push(values);
        if !self.feature_ring.is_full() {
            return Ok(StepOutput::default());
        }
        let start = self.frame_counter - g.context_len - self.phase_origin;
        if !start.is_multiple_of(g.stride) {
            return Ok(StepOutput::default());
        }

        let spliced: Vec<f32> = self.feature_ring.iter().flatten().copied().collect();
        self.phone_ring
            .push(dense_chain(model.phone_nn().layers(), &spliced));
        if let Some(c) = &mut self.counter {
            c.record_phone(model.phone_nn().weight_count() as u64);
        }
        if !self.phone_ring.is_full() {
            return Ok(StepOutput::default());
        }
        let pooled = pool_max_unchecked(self.phone_ring.iter().map(Vec::as_slice), g.phone_dim);
        self.pooled_ring.push(pooled);
        if !self.pooled_ring.is_full() {
            return Ok(StepOutput::default());
        }

        let input: Vec<f32> = self
            .pooled_ring
            .iter()
            .step_by(g.pooled_spacing)
            .flatten()
            .copied()
            .collect();
        let raw = softmax(&dense_chain(model.word_nn().layers(), &input));
        if let Some(c) = &mut self.counter {
            c.record_word(model.word_nn().weight_count() as u64);
        }
        self.score_ring.push(raw.clone());
        let smoothed = window_mean(self.score_ring.iter(), g.num_classes);
        let sample = PosteriorSample {
            frame_index,
            raw,
            smoothed,
        };
        let events = self.picker.push(sample.clone(), model.class_names());
        Ok(StepOutput {
            sample: Some(sample),
            events,
        })
    }

    /// Pushes a chunk of frames, collecting samples and events in order.
    pub fn push_frames(
        &mut self,
        model: &TdnnModel,
        frames: &[FeatureFrame],
    ) -> Result<(Vec<PosteriorSample>, Vec<DetectionEvent>)> {
        let mut samples = Vec::new();
        let mut events = Vec::new();
        for f in frames {
            let step = self.push_frame(model, f)?;
            samples.extend(step.sample);
            events.extend(step.events);
        }
        Ok((samples, events))
    }

    /// Reports events still waiting on look-ahead at the end of a stream.
    pub fn finish(&mut self, model: &TdnnModel) -> Vec<DetectionEvent> {
        self.picker.finish(model.class_names())
    }

    /// Switches the evaluation schedule. Pending events are flushed and the
    /// network warm-up restarts from the next frame; frame indices keep
    /// counting from where the stream was.
    pub fn set_skip_mode(
        &mut self,
        model: &TdnnModel,
        skip: SkipMode,
    ) -> Result<Vec<DetectionEvent>> {
        let mut fresh = Self::with_smoothing(
            model,
            skip,
            *self.picker.trigger(),
            self.score_ring.capacity(),
        )?;
        let events = self.finish(model);
        fresh.frame_counter = self.frame_counter;
        fresh.phase_origin = self.frame_counter;
        fresh.counter = self.counter.take();
        *self = fresh;
        Ok(events)
    }

    /// Clears all buffered context as if the stream had just started.
    pub fn reset(&mut self) {
        self.feature_ring.clear();
        self.phone_ring.clear();
        self.pooled_ring.clear();
        self.score_ring.clear();
        self.picker.reset();
        self.frame_counter = 0;
        self.phase_origin = 0;
        if self.counter.is_some() {
            self.counter = Some(MulCounter::new());
        }
    }
}

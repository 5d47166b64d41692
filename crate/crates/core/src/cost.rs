//! Multiplications per second of input audio.
//!
//! Only weight multiplications are counted: a dense layer costs
//! `in_dim * out_dim` per evaluation, while bias adds, activations, pooling
//! comparisons and the softmax are free. The analytic figure assumes the
//! cached streaming evaluation of [`crate::inference::StreamState`], where
//! every phone and word evaluation computes exactly one new output.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureFrame;
use crate::inference::{Geometry, SkipMode, StreamState, TriggerConfig};
use crate::model::TdnnModel;

pub const DEFAULT_FRAME_RATE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Phone,
    Word,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub stage: Stage,
    pub mults_per_eval: u64,
    pub evals_per_second: f64,
}

impl LayerCost {
    pub fn mulps(&self) -> f64 {
        self.mults_per_eval as f64 * self.evals_per_second
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub label: String,
    pub skip: SkipMode,
    pub params: u64,
    pub layers: Vec<LayerCost>,
    pub phone_evals_per_second: f64,
    pub word_evals_per_second: f64,
    pub total_mulps: f64,
}

impl CostReport {
    fn from_rates(model: &TdnnModel, skip: SkipMode, phone_rate: f64, word_rate: f64) -> Self {
        let stage_layers = |stage, layers: &[crate::model::DenseLayer], rate| {
            layers
                .iter()
                .map(|l| LayerCost {
                    name: l.name().to_string(),
                    stage,
                    mults_per_eval: l.weight_count() as u64,
                    evals_per_second: rate,
                })
                .collect::<Vec<_>>()
        };
        let mut layers = stage_layers(Stage::Phone, model.phone_nn().layers(), phone_rate);
        layers.extend(stage_layers(
            Stage::Word,
            model.word_nn().layers(),
            word_rate,
        ));
        let total_mulps = layers.iter().map(LayerCost::mulps).sum();
        Self {
            label: skip.label().to_string(),
            skip,
            params: model.param_count() as u64,
            layers,
            phone_evals_per_second: phone_rate,
            word_evals_per_second: word_rate,
            total_mulps,
        }
    }

    pub fn stage_mulps(&self, stage: Stage) -> f64 {
        self.layers
            .iter()
            .filter(|l| l.stage == stage)
            .map(LayerCost::mulps)
            .sum()
    }

    /// `total_mulps` rounded to an integer count.
    pub fn total_mulps_rounded(&self) -> u64 {
        self.total_mulps.round() as u64
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("cost report serializes");
        v["total_mulps"] = self.total_mulps_rounded().into();
        v["total_mulps_si"] = format_si(self.total_mulps).into();
        v
    }

    /// One row in the `Model | Params | Mul/s` summary layout.
    pub fn summary_row(&self) -> String {
        format!(
            "{:<12} {:>8} {:>10}",
            self.label,
            format_si(self.params as f64),
            format_si(self.total_mulps)
        )
    }
}

pub fn summary_header() -> String {
    format!("{:<12} {:>8} {:>10}", "Model", "Params", "Mul/s")
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", summary_header())?;
        writeln!(f, "{}", self.summary_row())?;
        writeln!(f)?;
        writeln!(
            f,
            "{:<10} {:>6} {:>10} {:>8} {:>12}",
            "Layer", "Stage", "Mul/eval", "Eval/s", "Mul/s"
        )?;
        for l in &self.layers {
            let stage = match l.stage {
                Stage::Phone => "phone",
                Stage::Word => "word",
            };
            writeln!(
                f,
                "{:<10} {:>6} {:>10} {:>8} {:>12}",
                l.name,
                stage,
                l.mults_per_eval,
                format!("{:.4}", l.evals_per_second)
                    .trim_end_matches('0')
                    .trim_end_matches('.'),
                l.mulps().round() as u64
            )?;
        }
        write!(
            f,
            "{:<10} {:>6} {:>10} {:>8} {:>12}",
            "Total",
            "",
            "",
            "",
            self.total_mulps_rounded()
        )
    }
}

/// Formats with three significant digits and an SI suffix: `25.1M`, `6.28M`,
/// `251K`.
pub fn format_si(value: f64) -> String {
    const UNITS: [&str; 5] = ["", "K", "M", "G", "T"];
    // `{:.2e}` rounds to three significant digits, including any carry.
    let sci = format!("{value:.2e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < 0 {
        return format!("{value:.2}");
    }
    let unit = ((exp / 3) as usize).min(UNITS.len() - 1);
    let shift = exp - 3 * unit as i32;
    let scaled: f64 = mantissa.parse::<f64>().expect("mantissa") * 10f64.powi(shift);
    let digits = (2 - shift).max(0) as usize;
    format!("{scaled:.digits$}{}", UNITS[unit])
}

/// Analytic cost with cached streaming evaluation at `frame_rate` frames/s.
pub fn mulps(model: &TdnnModel, skip: SkipMode, frame_rate: f64) -> Result<CostReport> {
    if frame_rate.is_nan() || frame_rate <= 0.0 {
        return Err(Error::Config(format!(
            "frame rate must be positive, got {frame_rate}"
        )));
    }
    let g = Geometry::new(model, skip)?;
    let rate = frame_rate / g.stride as f64;
    Ok(CostReport::from_rates(model, skip, rate, rate))
}

/// Cost without caching: each word output recomputes every phone vector in
/// its window.
pub fn naive_mulps(model: &TdnnModel, skip: SkipMode, frame_rate: f64) -> Result<f64> {
    let cached = mulps(model, skip, frame_rate)?;
    let g = Geometry::new(model, skip)?;
    Ok(cached.word_evals_per_second
        * (g.phone_span() as f64 * model.phone_nn().weight_count() as f64
            + model.word_nn().weight_count() as f64))
}

/// Per-stream multiplication tally, filled in by
/// [`StreamState::push_frame`] once enabled.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MulCounter {
    pub frames: u64,
    pub phone_evals: u64,
    pub word_evals: u64,
    pub phone_mults: u64,
    pub word_mults: u64,
    /// Counted-frame offset of the first phone evaluation.
    pub first_phone_frame: Option<usize>,
    pub first_word_frame: Option<usize>,
}

impl MulCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn record_frame(&mut self) {
        self.frames += 1;
    }

    /// Offset (in counted frames) of the frame being processed.
    fn current(&self) -> usize {
        self.frames.saturating_sub(1) as usize
    }

    pub(crate) fn record_phone(&mut self, mults: u64) {
        let at = self.current();
        self.first_phone_frame.get_or_insert(at);
        self.phone_evals += 1;
        self.phone_mults += mults;
    }

    pub(crate) fn record_word(&mut self, mults: u64) {
        let at = self.current();
        self.first_word_frame.get_or_insert(at);
        self.word_evals += 1;
        self.word_mults += mults;
    }

    pub fn total_mults(&self) -> u64 {
        self.phone_mults + self.word_mults
    }
}

/// Converts a counter into per-second rates. Each stage's count is divided
/// by the audio time after its first evaluation, so the one-off warm-up
/// delay does not dilute the steady-state rate.
pub fn measured_mulps(
    model: &TdnnModel,
    skip: SkipMode,
    counter: Option<&MulCounter>,
    frame_rate: f64,
) -> Result<CostReport> {
    let c = counter.ok_or_else(|| {
        Error::Unsupported("multiplication counter was not enabled on this stream".into())
    })?;
    let rate = |evals: u64, first: Option<usize>| match first {
        Some(first) if c.frames > first as u64 => {
            evals as f64 * frame_rate / (c.frames - first as u64) as f64
        }
        _ => 0.0,
    };
    let mut report = CostReport::from_rates(
        model,
        skip,
        rate(c.phone_evals, c.first_phone_frame),
        rate(c.word_evals, c.first_word_frame),
    );
    report.label = format!("{} (measured)", skip.label());
    Ok(report)
}

/// Streams `features` through a counting [`StreamState`] and reports the
/// measured rate.
pub fn measure_stream(
    model: &TdnnModel,
    skip: SkipMode,
    features: &[FeatureFrame],
) -> Result<CostReport> {
    let mut state = StreamState::new(model, skip, TriggerConfig::new(1.0))?;
    state.enable_mul_counter();
    for f in features {
        state.push_frame(model, f)?;
    }
    measured_mulps(
        model,
        skip,
        state.mul_counter(),
        model.frontend().frames_per_second(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_totals() {
        let m = TdnnModel::build_default(1, 0).unwrap();
        let t: Vec<u64> = SkipMode::ALL
            .iter()
            .map(|&s| {
                mulps(&m, s, DEFAULT_FRAME_RATE)
                    .unwrap()
                    .total_mulps_rounded()
            })
            .collect();
        assert_eq!(t, vec![25_113_600, 12_556_800, 6_278_400]);
        let si: Vec<String> = SkipMode::ALL
            .iter()
            .map(|&s| format_si(mulps(&m, s, DEFAULT_FRAME_RATE).unwrap().total_mulps))
            .collect();
        assert_eq!(si, vec!["25.1M", "12.6M", "6.28M"]);
    }

    #[test]
    fn stage_split() {
        let m = TdnnModel::build_default(1, 0).unwrap();
        let r = mulps(&m, SkipMode::None, 100.0).unwrap();
        assert_eq!(
            r.stage_mulps(Stage::Phone),
            (57728 + 16384 + 16384 + 16896) as f64 * 100.0
        );
        assert_eq!(r.stage_mulps(Stage::Word), (143616 + 128) as f64 * 100.0);
        assert_eq!(r.params, 251_136);
    }

    #[test]
    fn naive_exceeds_cached() {
        let m = TdnnModel::build_default(1, 0).unwrap();
        for s in SkipMode::ALL {
            let cached = mulps(&m, s, 100.0).unwrap().total_mulps;
            assert!(naive_mulps(&m, s, 100.0).unwrap() > cached);
        }
    }

    #[test]
    fn si_formatting() {
        assert_eq!(format_si(251_136.0), "251K");
        assert_eq!(format_si(999.0), "999");
        assert_eq!(format_si(1.5), "1.50");
        assert_eq!(format_si(999_600.0), "1.00M");
        assert_eq!(format_si(0.0), "0.00");
    }

    #[test]
    fn counter_required() {
        let m = TdnnModel::build_default(1, 0).unwrap();
        assert!(matches!(
            measured_mulps(&m, SkipMode::None, None, 100.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn empty_stream_counts_nothing() {
        let m = TdnnModel::build_default(1, 0).unwrap();
        let r = measure_stream(&m, SkipMode::None, &[]).unwrap();
        assert_eq!(r.total_mulps, 0.0);
    }

    #[test]
    fn text_and_json() {
        let m = TdnnModel::build_default(1, 0).unwrap();
        let r = mulps(&m, SkipMode::Stride4, 100.0).unwrap();
        let text = r.to_string();
        assert!(text.contains("TDNN-skip4"));
        assert!(text.contains("6.28M"));
        assert!(text.contains("6278400"));
        let j = r.to_json();
        assert_eq!(j["total_mulps"], 6_278_400u64);
        assert_eq!(j["params"], 251_136u64);
        assert_eq!(j["skip"], "stride4");
    }
}

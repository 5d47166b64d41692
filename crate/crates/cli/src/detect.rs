use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use tdnn_kws::cost::{measured_mulps, mulps};
use tdnn_kws::features::{Fbank, FbankStream};
use tdnn_kws::inference::{write_trace_csv, PosteriorTrace};
use tdnn_kws::{AudioStream, SkipMode, StreamState, TriggerConfig};

use crate::errors::{create, io_err, usage};
use crate::{parse_threshold, skip_arg};

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// 16-bit mono WAV at the model's sample rate.
    pub wav: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Smoothed-score threshold in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Frame skipping: none, 2 or 4.
    #[arg(long, default_value = "none", value_parser = skip_arg)]
    pub skip: SkipMode,
    /// Write the raw and smoothed posterior trace as CSV.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Append a summary object (frame count, multiplication counts) to the
    /// event lines.
    #[arg(long)]
    pub json: bool,
    /// Samples fed to the frontend per streaming step.
    #[arg(long, default_value_t = 1600)]
    pub chunk_samples: usize,
}

pub fn run(a: DetectArgs) -> anyhow::Result<()> {
    let threshold = parse_threshold(a.threshold)?;
    if a.chunk_samples == 0 {
        return Err(usage("--chunk-samples must be positive"));
    }
    let model = tdnn_kws::model::load(&a.model)?;
    let audio = AudioStream::read_wav(&a.wav)?;
    let fe = model.frontend().clone();
    if audio.sample_rate() != fe.sample_rate {
        return Err(usage(format!(
            "{}: sample rate {} Hz, model expects {} Hz",
            a.wav.display(),
            audio.sample_rate(),
            fe.sample_rate
        )));
    }

    let mut frontend = FbankStream::new(Fbank::new(fe.clone())?);
    let mut state = StreamState::new(&model, a.skip, TriggerConfig::new(threshold))?;
    state.enable_mul_counter();
    let hop_seconds = 1.0 / fe.frames_per_second();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let emit = |out: &mut std::io::StdoutLock, line: String| {
        writeln!(out, "{line}").map_err(|e| io_err(std::path::Path::new("<stdout>"), e))
    };

    let mut trace = PosteriorTrace::default();
    let mut num_events = 0usize;
    for chunk in audio.samples().chunks(a.chunk_samples) {
        let frames = model.normalizer().apply_all(&frontend.push(chunk)?)?;
        let (samples, events) = state.push_frames(&model, &frames)?;
        if a.trace_out.is_some() {
            trace.samples.extend(samples);
        }
        for e in &events {
            emit(&mut out, e.to_json(hop_seconds).to_string())?;
        }
        num_events += events.len();
    }
    for e in state.finish(&model) {
        emit(&mut out, e.to_json(hop_seconds).to_string())?;
        num_events += 1;
    }

    if let Some(path) = &a.trace_out {
        let w = create(path)?;
        write_trace_csv(w, &trace, model.class_names()).map_err(|e| io_err(path, e))?;
    }

    let frame_rate = fe.frames_per_second();
    let counter = state.mul_counter().cloned();
    let measured = measured_mulps(&model, a.skip, counter.as_ref(), frame_rate)?;
    let analytic = mulps(&model, a.skip, frame_rate)?;
    let mults = counter.map_or(0, |c| c.total_mults());
    log::info!(
        "{} frames, {num_events} events, {mults} multiplications ({} Mul/s measured, {} analytic)",
        state.frame_counter(),
        tdnn_kws::cost::format_si(measured.total_mulps),
        tdnn_kws::cost::format_si(analytic.total_mulps),
    );
    if a.json {
        let summary = serde_json::json!({
            "summary": {
                "frames": state.frame_counter(),
                "audio_seconds": audio.duration_seconds(),
                "events": num_events,
                "skip": a.skip.to_string(),
                "threshold": threshold,
                "mults": mults,
                "measured_mulps": measured.total_mulps,
                "analytic_mulps": analytic.total_mulps,
            }
        });
        emit(&mut out, summary.to_string())?;
    }
    Ok(())
}

use std::io::BufReader;
use std::path::PathBuf;

use clap::Args;
use tdnn_kws::eval::harness::OPERATING_FA_PER_HOUR;
use tdnn_kws::eval::{
    candidate_thresholds, roc_sweep_many, GroundTruth, ScoredStream, DEFAULT_TOLERANCE_FRAMES,
};
use tdnn_kws::inference::{read_trace_csv, DEFAULT_SUPPRESSION_FRAMES};
use tdnn_kws::{
    batch_forward, extract_fbank, par, AudioStream, PosteriorTrace, SkipMode, TriggerConfig,
};

use crate::data::{read_truth, truth_sidecar};
use crate::errors::{create, io_err, say, usage};
use crate::skip_arg;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Posterior trace CSV written by `detect --trace-out`; pair each with
    /// a `--truth`.
    #[arg(long, conflicts_with_all = ["wav", "model"])]
    pub trace: Vec<PathBuf>,
    /// Ground truth JSON. For `--wav` inputs it defaults to the sidecar.
    #[arg(long)]
    pub truth: Vec<PathBuf>,
    /// Audio stream to score with `--model`.
    #[arg(long, requires = "model")]
    pub wav: Vec<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "none", value_parser = skip_arg)]
    pub skip: SkipMode,
    /// Comma-separated thresholds; every distinct peak score when omitted.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Frames after a span's end during which a detection still counts.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE_FRAMES)]
    pub tolerance: usize,
    /// Minimum distance between two events of one keyword, in frames.
    #[arg(long, default_value_t = DEFAULT_SUPPRESSION_FRAMES)]
    pub suppression: usize,
    /// False-alarm rate at which the summary FRR is read off the curve.
    #[arg(long, default_value_t = OPERATING_FA_PER_HOUR)]
    pub fa_per_hour: f64,
    /// Write the full curve as CSV.
    #[arg(long)]
    pub roc_out: Option<PathBuf>,
    /// Print the curve and summary as one JSON object.
    #[arg(long)]
    pub json: bool,
}

/// Class names plus one scored trace per stream.
type Loaded = (Vec<String>, Vec<(PosteriorTrace, GroundTruth)>);

fn load_traces(a: &EvalArgs) -> anyhow::Result<Loaded> {
    if !a.trace.is_empty() {
        if a.truth.len() != a.trace.len() {
            return Err(usage(format!(
                "{} --trace files need as many --truth files, got {}",
                a.trace.len(),
                a.truth.len()
            )));
        }
        let mut names: Option<Vec<String>> = None;
        let mut out = Vec::new();
        for (tp, gp) in a.trace.iter().zip(&a.truth) {
            let f = std::fs::File::open(tp).map_err(|e| io_err(tp, e))?;
            let (n, trace) = read_trace_csv(BufReader::new(f))?;
            match &names {
                Some(have) if *have != n => {
                    return Err(usage(format!(
                        "{}: classes {n:?} differ from {have:?}",
                        tp.display()
                    )))
                }
                None => names = Some(n),
                _ => {}
            }
            out.push((trace, read_truth(gp)?.truth));
        }
        return Ok((names.unwrap_or_default(), out));
    }

    let Some(model_path) = &a.model else {
        return Err(usage("pass --trace/--truth pairs or --wav with --model"));
    };
    if a.wav.is_empty() {
        return Err(usage("--model needs at least one --wav"));
    }
    if !a.truth.is_empty() && a.truth.len() != a.wav.len() {
        return Err(usage(
            "give one --truth per --wav, or none to use the sidecars",
        ));
    }
    let model = tdnn_kws::model::load(model_path)?;
    let truths = a
        .wav
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let p = a.truth.get(i).cloned().unwrap_or_else(|| truth_sidecar(w));
            Ok(read_truth(&p)?.truth)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let fe = model.frontend().clone();
    let traces = par::map(&a.wav, |w| -> anyhow::Result<PosteriorTrace> {
        let audio = AudioStream::read_wav(w)?;
        let feats = model.normalizer().apply_all(&extract_fbank(&audio, &fe)?)?;
        Ok(batch_forward(&model, &feats, a.skip)?)
    })
    .into_iter()
    .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((
        model.class_names().to_vec(),
        traces.into_iter().zip(truths).collect(),
    ))
}

pub fn run(a: EvalArgs) -> anyhow::Result<()> {
    if !(a.fa_per_hour >= 0.0 && a.fa_per_hour.is_finite()) {
        return Err(usage(format!("bad --fa-per-hour {}", a.fa_per_hour)));
    }
    let (names, pairs) = load_traces(&a)?;
    let streams: Vec<ScoredStream<'_>> = pairs
        .iter()
        .map(|(trace, truth)| ScoredStream { trace, truth })
        .collect();
    let thresholds = match &a.thresholds {
        Some(t) => {
            if let Some(bad) = t.iter().find(|x| !x.is_finite()) {
                return Err(usage(format!("bad threshold {bad}")));
            }
            let mut t = t.clone();
            t.sort_by(|x, y| y.total_cmp(x));
            t.dedup();
            t
        }
        None => candidate_thresholds(&streams, &names, a.suppression),
    };
    let trigger = TriggerConfig {
        threshold: 0.0,
        suppression_frames: a.suppression,
    };
    let roc = roc_sweep_many(&streams, &names, &thresholds, &trigger, a.tolerance)?;
    let frr = roc.frr_at(a.fa_per_hour);
    let spans: usize = pairs.iter().map(|(_, t)| t.spans.len()).sum();
    let hours: f64 = pairs
        .iter()
        .map(|(_, t)| t.total_audio_seconds)
        .sum::<f64>()
        / 3600.0;

    if let Some(path) = &a.roc_out {
        roc.write_csv(create(path)?).map_err(|e| io_err(path, e))?;
    }
    if a.json {
        let v = serde_json::json!({
            "streams": pairs.len(),
            "spans": spans,
            "hours": hours,
            "fa_per_hour": a.fa_per_hour,
            "frr_percent": frr,
            "roc": roc.points,
        });
        say(serde_json::to_string_pretty(&v)?)?;
    } else {
        say(format_args!(
            "{} streams, {spans} keywords, {:.3} h: FRR {frr:.2}% at {} FA/hr",
            pairs.len(),
            hours,
            a.fa_per_hour
        ))?;
    }
    Ok(())
}

//! Ground-truth sidecars and the two data-producing subcommands.
//!
//! A keyword stream is a WAV file `name.wav` next to `name.truth.json`,
//! which holds the serialized ground truth plus the keyword names.

use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::Value;
use tdnn_kws::eval::dataset::{load_speech_commands, write_phone_labels};
use tdnn_kws::eval::harness::{generate, HarnessConfig};
use tdnn_kws::eval::{make_derivative_stream, mix_noise, white_noise, GroundTruth, MixSpec};
use tdnn_kws::AudioStream;

use crate::errors::{create_dir, io_err, read_to_string, say, usage, write};
use crate::KeywordArgs;

pub struct TruthFile {
    pub truth: GroundTruth,
    pub keywords: Option<Vec<String>>,
}

pub fn truth_sidecar(wav: &Path) -> PathBuf {
    wav.with_extension("truth.json")
}

pub fn read_truth(path: &Path) -> anyhow::Result<TruthFile> {
    let text = read_to_string(path)?;
    let truth = GroundTruth::from_json(&text)?;
    let v: Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let keywords = match v.get("keywords") {
        Some(k) => Some(
            serde_json::from_value::<Vec<String>>(k.clone())
                .map_err(|e| usage(format!("{}: keywords: {e}", path.display())))?,
        ),
        None => None,
    };
    if let Some(k) = &keywords {
        if let Some(s) = truth.spans.iter().find(|s| s.keyword >= k.len()) {
            return Err(usage(format!(
                "{}: span keyword {} out of range for {} keywords",
                path.display(),
                s.keyword,
                k.len()
            )));
        }
    }
    Ok(TruthFile { truth, keywords })
}

pub fn write_truth(path: &Path, truth: &GroundTruth, keywords: &[String]) -> anyhow::Result<()> {
    let mut v = serde_json::to_value(truth)?;
    v["keywords"] = serde_json::to_value(keywords)?;
    write(path, serde_json::to_string_pretty(&v)? + "\n")
}

/// Every `*.wav` in `dir` that has a truth sidecar, in name order.
pub fn list_streams(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let p = entry.map_err(|e| io_err(dir, e))?.path();
        if p.extension().is_some_and(|e| e == "wav") && truth_sidecar(&p).exists() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Speech Commands style directory: one folder of WAV clips per label.
    pub clips_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth path; defaults to the sidecar (`s.wav` gets `s.truth.json`).
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
    #[command(flatten)]
    pub keywords: KeywordArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add noise at this SNR over the whole stream.
    #[arg(long)]
    pub snr_db: Option<f64>,
    /// Noise recording to mix in; white noise when omitted.
    #[arg(long, requires = "snr_db")]
    pub noise: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    pub gap_min: f64,
    #[arg(long, default_value_t = 1.3)]
    pub gap_max: f64,
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    pub gain_min_db: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    pub gain_max_db: f64,
    /// Clips read per label folder.
    #[arg(long)]
    pub max_per_label: Option<usize>,
}

pub fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let keywords = a.keywords.require("synth needs the keyword folders")?;
    let clips = load_speech_commands(&a.clips_dir, &keywords, a.max_per_label)?;
    let spec = MixSpec {
        amplitude_range_db: (a.gain_min_db, a.gain_max_db),
        gap_seconds: (a.gap_min, a.gap_max),
        seed: a.seed,
        ..MixSpec::default()
    };
    let labelled: Vec<_> = clips.into_iter().map(|c| c.clip).collect();
    let stream = make_derivative_stream(&labelled, &spec)?;
    let (audio, clipped) = match a.snr_db {
        None => (stream.audio, 0.0),
        Some(snr) => {
            let noise = match &a.noise {
                Some(p) => AudioStream::read_wav(p)?,
                None => white_noise(
                    stream.audio.len(),
                    stream.audio.sample_rate(),
                    a.seed.wrapping_add(1),
                )?,
            };
            let mixed = mix_noise(&stream.audio, &noise, snr, a.seed)?;
            (mixed.audio, mixed.clipped_fraction)
        }
    };
    audio.write_wav(&a.out)?;
    let truth_path = a.truth_out.clone().unwrap_or_else(|| truth_sidecar(&a.out));
    write_truth(&truth_path, &stream.truth, &keywords)?;
    let summary = serde_json::json!({
        "wav": a.out,
        "truth": truth_path,
        "clips": labelled.len(),
        "spans": stream.truth.spans.len(),
        "seconds": audio.duration_seconds(),
        "snr_db": a.snr_db,
        "clipped_fraction": clipped,
    });
    say(&summary)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct GenHarnessArgs {
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train_seconds: Option<f64>,
    #[arg(long)]
    pub test_seconds: Option<f64>,
    #[arg(long)]
    pub pretrain_seconds: Option<f64>,
}

/// Writes `phones/` (WAVs with `.phones` label sidecars), `train/` and
/// `test/` (one keyword stream each) and `harness.json`.
pub fn gen_harness(a: GenHarnessArgs) -> anyhow::Result<()> {
    let base = HarnessConfig::default();
    let cfg = HarnessConfig {
        seed: a.seed,
        train_seconds: a.train_seconds.unwrap_or(base.train_seconds),
        test_seconds: a.test_seconds.unwrap_or(base.test_seconds),
        pretrain_seconds: a.pretrain_seconds.unwrap_or(base.pretrain_seconds),
        ..base
    };
    for s in [cfg.train_seconds, cfg.test_seconds, cfg.pretrain_seconds] {
        if !(s > 0.0 && s.is_finite()) {
            return Err(usage(format!("durations must be positive, got {s}")));
        }
    }
    let data = generate(&cfg)?;
    let phones = a.out_dir.join("phones");
    create_dir(&phones)?;
    for (i, (audio, labels)) in data.phone_audio.iter().enumerate() {
        let wav = phones.join(format!("utt_{i:04}.wav"));
        audio.write_wav(&wav)?;
        write_phone_labels(&wav.with_extension("phones"), labels)?;
    }
    for (name, stream) in [("train", &data.train), ("test", &data.test)] {
        let dir = a.out_dir.join(name);
        create_dir(&dir)?;
        let wav = dir.join("stream.wav");
        stream.stream.audio.write_wav(&wav)?;
        write_truth(&truth_sidecar(&wav), stream.truth(), &cfg.keyword_names)?;
    }
    write(
        &a.out_dir.join("harness.json"),
        serde_json::to_string_pretty(&cfg)? + "\n",
    )?;
    say(serde_json::json!({
        "out_dir": a.out_dir,
        "phone_utterances": data.phone_audio.len(),
        "train_spans": data.train.truth().spans.len(),
        "test_spans": data.test.truth().spans.len(),
    }))?;
    Ok(())
}

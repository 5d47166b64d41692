use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use tdnn_kws::eval::dataset::{load_phone_corpus, load_speech_commands};
use tdnn_kws::eval::{make_derivative_stream, GroundTruth, MixSpec};
use tdnn_kws::inference::Geometry;
use tdnn_kws::model::{default_class_names, Architecture};
use tdnn_kws::training::{
    align_word_labels, train_phone_stage, train_word_stage, EpochLog, LabeledFrameSet, TrainConfig,
    DEFAULT_MIN_COVERAGE,
};
use tdnn_kws::{extract_fbank, par, AudioStream, FeatureNormalizer, SkipMode, TdnnModel};

use crate::data::{list_streams, read_truth, truth_sidecar};
use crate::errors::{create, io_err, usage};
use crate::{skip_arg, KeywordArgs};

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Frame-level phone classification on `*.wav` + `*.phones` pairs.
    Phone,
    /// Keyword training on top of a phone-stage model.
    Word,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Phone stage: WAVs with `.phones` sidecars. Word stage: WAVs with
    /// `.truth.json` sidecars, or a Speech Commands style tree.
    pub data_dir: PathBuf,
    #[arg(long, value_enum)]
    pub stage: Stage,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Phone-stage model whose phone network starts the word stage.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    #[command(flatten)]
    pub keywords: KeywordArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learning rate [default: 0.05 phone, 0.01 word].
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// Consecutive word outputs per training segment.
    #[arg(long)]
    pub segment_outputs: Option<usize>,
    /// Clip each gradient to this Euclidean norm (word stage default: 5).
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    /// Keep the phone network fixed during the word stage.
    #[arg(long)]
    pub freeze_phone_nn: bool,
    /// Evaluation schedule the word stage is trained under.
    #[arg(long, default_value = "none", value_parser = skip_arg)]
    pub skip: SkipMode,
    /// Fraction of a keyword a word output must see to be labelled with it.
    #[arg(long, default_value_t = DEFAULT_MIN_COVERAGE)]
    pub min_coverage: f64,
    /// Speech Commands clips read per label folder.
    #[arg(long)]
    pub max_per_label: Option<usize>,
    /// Write the per-epoch JSON log here instead of standard output.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        let d = match self.stage {
            Stage::Phone => TrainConfig::default(),
            Stage::Word => TrainConfig::word_default(),
        };
        TrainConfig {
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed: self.seed,
            freeze_phone_nn: self.freeze_phone_nn,
            segment_outputs: self.segment_outputs.unwrap_or(d.segment_outputs),
            steps_per_epoch: self.steps_per_epoch,
            skip: self.skip,
            max_grad_norm: self.max_grad_norm.or(d.max_grad_norm),
        }
    }
}

struct EpochSink {
    out: Box<dyn Write>,
    path: PathBuf,
    failed: Option<std::io::Error>,
}

impl EpochSink {
    fn new(path: Option<&Path>) -> anyhow::Result<Self> {
        Ok(match path {
            Some(p) => Self {
                out: Box::new(create(p)?),
                path: p.to_path_buf(),
                failed: None,
            },
            None => Self {
                out: Box::new(std::io::stdout()),
                path: PathBuf::from("<stdout>"),
                failed: None,
            },
        })
    }

    fn push(&mut self, e: &EpochLog) {
        log::info!(
            "{} epoch {}: loss {:.4} accuracy {:.4}",
            e.stage,
            e.epoch,
            e.loss,
            e.accuracy
        );
        if self.failed.is_none() {
            if let Err(err) =
                writeln!(self.out, "{}", e.to_json_line()).and_then(|_| self.out.flush())
            {
                self.failed = Some(err);
            }
        }
    }

    fn finish(self) -> anyhow::Result<()> {
        match self.failed {
            Some(e) => Err(io_err(&self.path, e)),
            None => Ok(()),
        }
    }
}

pub fn run(a: TrainArgs) -> anyhow::Result<()> {
    let config = a.config();
    config.validate()?;
    if !(a.min_coverage > 0.0 && a.min_coverage <= 1.0) {
        return Err(usage(format!(
            "--min-coverage must lie in (0, 1], got {}",
            a.min_coverage
        )));
    }
    let model = match a.stage {
        Stage::Phone => phone_stage(&a, &config)?,
        Stage::Word => word_stage(&a, &config)?,
    };
    tdnn_kws::model::save(&model, &a.out)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

fn phone_stage(a: &TrainArgs, config: &TrainConfig) -> anyhow::Result<TdnnModel> {
    if a.init_from.is_some() {
        return Err(usage("--init-from applies to the word stage only"));
    }
    let names = match a.keywords.resolve() {
        Some(k) => {
            let mut n = k;
            n.push(tdnn_kws::model::FILLER_NAME.to_string());
            n
        }
        None => default_class_names(1),
    };
    let arch = Architecture::standard(names.len() - 1);
    let mut model = TdnnModel::random(&arch, a.seed)?;
    model.set_class_names(names)?;

    let corpus = load_phone_corpus(&a.data_dir)?;
    let fe = model.frontend().clone();
    let raw = par::map(&corpus, |(audio, _)| extract_fbank(audio, &fe))
        .into_iter()
        .collect::<tdnn_kws::Result<Vec<_>>>()?;
    let all: Vec<_> = raw.iter().flatten().cloned().collect();
    let normalizer = FeatureNormalizer::fit(&all)?;
    let sets = raw
        .iter()
        .zip(&corpus)
        .map(|(f, (_, labels))| {
            Ok(LabeledFrameSet {
                features: normalizer.apply_all(f)?,
                phone_labels: Some(labels.clone()),
                word_labels: None,
            })
        })
        .collect::<tdnn_kws::Result<Vec<_>>>()?;
    model.set_normalizer(normalizer)?;

    let mut sink = EpochSink::new(a.log.as_deref())?;
    let trained = train_phone_stage(model, &sets, config, |e| sink.push(e))?;
    sink.finish()?;
    Ok(trained.model)
}

/// Keyword streams with ground truth, plus the keyword names.
type Streams = (Vec<(AudioStream, GroundTruth)>, Vec<String>);

fn word_streams(a: &TrainArgs) -> anyhow::Result<Streams> {
    let listed = list_streams(&a.data_dir)?;
    if listed.is_empty() {
        let keywords = a
            .keywords
            .require("no *.truth.json streams found, so the Speech Commands layout is assumed")?;
        let clips = load_speech_commands(&a.data_dir, &keywords, a.max_per_label)?;
        let spec = MixSpec {
            gap_seconds: (0.8, 1.3),
            seed: a.seed,
            ..MixSpec::default()
        };
        let labelled: Vec<_> = clips.into_iter().map(|c| c.clip).collect();
        let stream = make_derivative_stream(&labelled, &spec)?;
        return Ok((vec![(stream.audio, stream.truth)], keywords));
    }
    let mut keywords = a.keywords.resolve();
    let mut out = Vec::new();
    for wav in listed {
        let t = read_truth(&truth_sidecar(&wav))?;
        match (&keywords, t.keywords) {
            (None, Some(k)) => keywords = Some(k),
            (Some(have), Some(k)) if *have != k => {
                return Err(usage(format!(
                    "{}: keywords {k:?} differ from {have:?}",
                    wav.display()
                )))
            }
            _ => {}
        }
        out.push((AudioStream::read_wav(&wav)?, t.truth));
    }
    let keywords = keywords.ok_or_else(|| usage("keyword names unknown: pass --keywords"))?;
    Ok((out, keywords))
}

fn word_stage(a: &TrainArgs, config: &TrainConfig) -> anyhow::Result<TdnnModel> {
    let init_path = a.init_from.as_ref().ok_or_else(|| {
        usage("the word stage starts from a phone-stage model: pass --init-from <model>")
    })?;
    let init = tdnn_kws::model::load(init_path)?;
    let (streams, keywords) = word_streams(a)?;
    if let Some(s) = streams
        .iter()
        .flat_map(|(_, t)| &t.spans)
        .find(|s| s.keyword >= keywords.len())
    {
        return Err(usage(format!(
            "span keyword {} out of range for {} keywords",
            s.keyword,
            keywords.len()
        )));
    }
    let mut names = keywords;
    names.push(tdnn_kws::model::FILLER_NAME.to_string());
    let arch = Architecture::standard(names.len() - 1);
    let model = TdnnModel::transfer(
        init.phone_nn().clone(),
        &arch,
        init.normalizer().clone(),
        names,
        a.seed,
    )?;
    let rf = Geometry::new(&model, a.skip)?.receptive_field();
    let fe = model.frontend().clone();
    let sets = streams
        .iter()
        .map(|(audio, truth)| {
            let features = model.normalizer().apply_all(&extract_fbank(audio, &fe)?)?;
            let labels = align_word_labels(
                features.len(),
                &truth.spans,
                rf,
                model.filler_index(),
                a.min_coverage,
            );
            Ok(LabeledFrameSet {
                features,
                phone_labels: None,
                word_labels: Some(labels),
            })
        })
        .collect::<tdnn_kws::Result<Vec<_>>>()?;

    let mut sink = EpochSink::new(a.log.as_deref())?;
    let trained = train_word_stage(model, &sets, config, |e| sink.push(e))?;
    sink.finish()?;
    Ok(trained.model)
}

//! Seeded synthetic keyword task and the two-stage training recipe run on it.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioStream;
use crate::error::Result;
use crate::features::{extract_fbank, FeatureFrame, FeatureNormalizer, FrontendConfig};
use crate::inference::{
    batch_forward, Geometry, PosteriorTrace, SkipMode, TriggerConfig, DEFAULT_SUPPRESSION_FRAMES,
};
use crate::model::{Architecture, TdnnModel, FILLER_NAME};
use crate::par;
use crate::training::{
    align_word_labels, evaluate_word_stage, train_phone_stage, train_word_stage, LabeledFrameSet,
    TrainConfig, DEFAULT_MIN_COVERAGE,
};

use super::metrics::{
    candidate_thresholds, roc_sweep_many, GroundTruth, RocCurve, ScoredStream,
    DEFAULT_TOLERANCE_FRAMES,
};
use super::mix::{make_derivative_stream, DerivativeStream, LabeledClip, MixSpec};
use super::synth::{self, contains_run, random_phones, render, Voice};

/// False-alarm rate at which FRR is reported.
pub const OPERATING_FA_PER_HOUR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub seed: u64,
    pub keyword_names: Vec<String>,
    /// Phone strings of the keywords.
    pub keywords: Vec<Vec<usize>>,
    pub train_seconds: f64,
    pub test_seconds: f64,
    pub pretrain_seconds: f64,
    /// Share of clips that are keywords.
    pub keyword_fraction: f64,
    /// Share of filler clips built by rearranging a keyword's phones.
    pub confuser_fraction: f64,
    /// Share of those confusers that instead replace one keyword phone.
    pub substitution_fraction: f64,
    pub gap_seconds: (f64, f64),
    pub amplitude_range_db: (f64, f64),
    pub noise_floor: f32,
    pub phone_train: TrainConfig,
    pub word_train: TrainConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            keyword_names: vec!["samee".into(), "shofu".into()],
            keywords: vec![vec![9, 1, 8, 2], vec![10, 5, 11, 3]],
            train_seconds: 1200.0,
            test_seconds: 600.0,
            pretrain_seconds: 300.0,
            keyword_fraction: 0.4,
            confuser_fraction: 0.3,
            substitution_fraction: 0.0,
            gap_seconds: (0.8, 1.3),
            amplitude_range_db: (-10.0, 10.0),
            noise_floor: 1e-3,
            phone_train: TrainConfig {
                learning_rate: 0.05,
                batch_size: 64,
                epochs: 4,
                ..TrainConfig::default()
            },
            word_train: TrainConfig {
                batch_size: 64,
                epochs: 25,
                segment_outputs: 32,
                steps_per_epoch: Some(200),
                ..TrainConfig::word_default()
            },
        }
    }
}

impl HarnessConfig {
    pub fn class_names(&self) -> Vec<String> {
        let mut names = self.keyword_names.clone();
        names.push(FILLER_NAME.to_string());
        names
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::standard(self.keywords.len())
    }
}

/// Filler phone string: random, or (with `confuser_fraction`) a keyword
/// with one phone substituted or its phones reordered. Never contains a
/// keyword.
fn filler_phones<R: Rng>(cfg: &HarnessConfig, rng: &mut R) -> Vec<usize> {
    loop {
        let phones = if rng.gen_bool(cfg.confuser_fraction) {
            let mut p = cfg.keywords[rng.gen_range(0..cfg.keywords.len())].clone();
            if rng.gen_bool(cfg.substitution_fraction) {
                let i = rng.gen_range(0..p.len());
                p[i] = rng.gen_range(1..synth::NUM_PHONES);
            } else {
                rand::seq::SliceRandom::shuffle(p.as_mut_slice(), rng);
            }
            p
        } else {
            let len = rng.gen_range(3..=6);
            random_phones(len, rng)
        };
        if !cfg.keywords.iter().any(|k| contains_run(&phones, k)) {
            return phones;
        }
    }
}

/// Isolated clips totalling roughly `seconds` (gaps included), each with
/// the phone string it was rendered from.
pub fn make_clips<R: Rng>(
    cfg: &HarnessConfig,
    seconds: f64,
    rate: u32,
    rng: &mut R,
) -> (Vec<LabeledClip>, Vec<Vec<usize>>) {
    let mut clips = Vec::new();
    let mut strings = Vec::new();
    let mut total = 0.0;
    let mean_gap = 0.5 * (cfg.gap_seconds.0 + cfg.gap_seconds.1);
    while total < seconds {
        let (label, phones) = if rng.gen_bool(cfg.keyword_fraction) {
            let k = rng.gen_range(0..cfg.keywords.len());
            (Some(k), cfg.keywords[k].clone())
        } else {
            (None, filler_phones(cfg, rng))
        };
        let voice = Voice::random(rng);
        let r = render(&phones, &voice, rate, rng);
        total += r.len() as f64 / rate as f64 + mean_gap;
        clips.push(LabeledClip {
            audio: AudioStream::new(r.samples, rate).expect("rendered audio is finite"),
            label,
        });
        strings.push(phones);
    }
    (clips, strings)
}

/// A derivative stream with its features.
#[derive(Debug, Clone)]
pub struct FeatureStream {
    pub stream: DerivativeStream,
    pub features: Vec<FeatureFrame>,
    /// Phone string of each clip, indexed like `stream.placements[i].clip`.
    pub clip_phones: Vec<Vec<usize>>,
}

impl FeatureStream {
    pub fn truth(&self) -> &GroundTruth {
        &self.stream.truth
    }
}

#[derive(Debug, Clone)]
pub struct HarnessData {
    /// Phone-labelled pretraining audio with per-frame labels.
    pub phone_audio: Vec<(AudioStream, Vec<usize>)>,
    /// The same corpus as normalized features.
    pub phone_sets: Vec<LabeledFrameSet>,
    pub train: FeatureStream,
    pub test: FeatureStream,
    pub normalizer: FeatureNormalizer,
}

fn derivative<R: Rng>(
    cfg: &HarnessConfig,
    seconds: f64,
    rng: &mut R,
) -> Result<(DerivativeStream, Vec<Vec<usize>>)> {
    let fe = FrontendConfig::default();
    let (clips, phones) = make_clips(cfg, seconds, fe.sample_rate, rng);
    let spec = MixSpec {
        amplitude_range_db: cfg.amplitude_range_db,
        gap_seconds: cfg.gap_seconds,
        seed: rng.gen(),
        ..MixSpec::default()
    };
    let mut stream = make_derivative_stream(&clips, &spec)?;
    let mut samples = stream.audio.samples().to_vec();
    synth::add_noise_floor(&mut samples, cfg.noise_floor, rng);
    stream.audio = AudioStream::new(samples, fe.sample_rate)?;
    Ok((stream, phones))
}

/// Phone-labelled utterances of about three seconds each.
fn phone_corpus<R: Rng>(cfg: &HarnessConfig, rng: &mut R) -> Vec<(Vec<f32>, Vec<usize>)> {
    let fe = FrontendConfig::default();
    let mut out = Vec::new();
    let mut total = 0.0;
    while total < cfg.pretrain_seconds {
        let voice = Voice::random(rng);
        let mut phones = vec![synth::SILENCE];
        for _ in 0..24 {
            phones.push(if rng.gen_bool(0.1) {
                synth::SILENCE
            } else {
                rng.gen_range(1..synth::NUM_PHONES)
            });
        }
        phones.push(synth::SILENCE);
        let mut r = render(&phones, &voice, fe.sample_rate, rng);
        let gain = super::mix::db_to_gain(
            rng.gen_range(cfg.amplitude_range_db.0..=cfg.amplitude_range_db.1),
        ) as f32;
        r.samples.iter_mut().for_each(|s| *s *= gain);
        synth::add_noise_floor(&mut r.samples, cfg.noise_floor, rng);
        total += r.len() as f64 / fe.sample_rate as f64;
        let labels = r.frame_labels(&fe);
        out.push((r.samples, labels));
    }
    out
}

/// Builds every dataset of one harness run from `cfg.seed`.
pub fn generate(cfg: &HarnessConfig) -> Result<HarnessData> {
    let fe = FrontendConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let corpus = phone_corpus(cfg, &mut rng);
    let train = derivative(cfg, cfg.train_seconds, &mut rng)?;
    let test = derivative(cfg, cfg.test_seconds, &mut rng)?;

    let raw_phone: Vec<Vec<FeatureFrame>> = par::map(&corpus, |(s, _)| {
        extract_fbank(
            &AudioStream::new(s.clone(), fe.sample_rate).expect("finite"),
            &fe,
        )
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let all: Vec<FeatureFrame> = raw_phone.iter().flatten().cloned().collect();
    let normalizer = FeatureNormalizer::fit(&all)?;
    let phone_sets = raw_phone
        .iter()
        .zip(&corpus)
        .map(|(f, (_, labels))| {
            Ok(LabeledFrameSet {
                features: normalizer.apply_all(f)?,
                phone_labels: Some(labels.clone()),
                word_labels: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let featurize =
        |(stream, clip_phones): (DerivativeStream, Vec<Vec<usize>>)| -> Result<FeatureStream> {
            let f = extract_fbank(&stream.audio, &fe)?;
            Ok(FeatureStream {
                features: normalizer.apply_all(&f)?,
                stream,
                clip_phones,
            })
        };
    let phone_audio = corpus
        .into_iter()
        .map(|(s, labels)| Ok((AudioStream::new(s, fe.sample_rate)?, labels)))
        .collect::<Result<Vec<_>>>()?;
    Ok(HarnessData {
        phone_audio,
        phone_sets,
        train: featurize(train)?,
        test: featurize(test)?,
        normalizer,
    })
}

/// Word-labelled training set for `model` evaluated under `skip`.
pub fn word_set(
    model: &TdnnModel,
    stream: &FeatureStream,
    skip: SkipMode,
) -> Result<LabeledFrameSet> {
    let rf = Geometry::new(model, skip)?.receptive_field();
    Ok(LabeledFrameSet {
        features: stream.features.clone(),
        phone_labels: None,
        word_labels: Some(align_word_labels(
            stream.features.len(),
            &stream.truth().spans,
            rf,
            model.filler_index(),
            DEFAULT_MIN_COVERAGE,
        )),
    })
}

/// Held-out metrics of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub frr_at_operating_point: f64,
    pub heldout_loss: f64,
    pub heldout_accuracy: f64,
    pub roc: RocCurve,
}

impl ModelScore {
    /// Lower FRR wins; equal FRR falls back to lower held-out loss.
    pub fn beats(&self, other: &ModelScore) -> bool {
        (self.frr_at_operating_point, self.heldout_loss)
            < (other.frr_at_operating_point, other.heldout_loss)
    }
}

pub fn score_model(model: &TdnnModel, test: &FeatureStream, skip: SkipMode) -> Result<ModelScore> {
    let trace: PosteriorTrace = batch_forward(model, &test.features, skip)?;
    let streams = [ScoredStream {
        trace: &trace,
        truth: test.truth(),
    }];
    let names = model.class_names();
    let thresholds = candidate_thresholds(&streams, names, DEFAULT_SUPPRESSION_FRAMES);
    let roc = roc_sweep_many(
        &streams,
        names,
        &thresholds,
        &TriggerConfig::new(0.0),
        DEFAULT_TOLERANCE_FRAMES,
    )?;
    let (heldout_loss, heldout_accuracy) =
        evaluate_word_stage(model, &[word_set(model, test, skip)?], skip)?;
    Ok(ModelScore {
        frr_at_operating_point: roc.frr_at(OPERATING_FA_PER_HOUR),
        heldout_loss,
        heldout_accuracy,
        roc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub num_test_spans: usize,
    pub phone_accuracy: f64,
    pub transfer: ModelScore,
    pub random_init: ModelScore,
    pub stride4: Option<ModelScore>,
    /// Wall time of data generation, both stages and scoring, without the
    /// stride-4 run.
    pub seconds: f64,
    pub stride4_seconds: Option<f64>,
}

impl SeedReport {
    pub fn transfer_wins(&self) -> bool {
        self.transfer.beats(&self.random_init)
    }
}

/// Trained artefacts of one seed, for callers that want to keep them.
#[derive(Debug, Clone)]
pub struct SeedModels {
    pub transfer: TdnnModel,
    pub random_init: TdnnModel,
    pub stride4: Option<TdnnModel>,
}

/// Pretrains the phone stage, then trains the word stage from transferred
/// and from random phone weights on the same budget, and scores both on
/// the held-out stream. With `with_stride4`, a third model is fine-tuned
/// from the transferred phone network under the stride-4 schedule.
pub fn run_seed(cfg: &HarnessConfig, with_stride4: bool) -> Result<(SeedReport, SeedModels)> {
    let started = Instant::now();
    let data = generate(cfg)?;
    let arch = cfg.architecture();
    let names = cfg.class_names();

    let mut base = TdnnModel::random(&arch, cfg.seed)?;
    base.set_normalizer(data.normalizer.clone())?;
    base.set_class_names(names.clone())?;
    let phone_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.phone_train.clone()
    };
    let pre = train_phone_stage(base, &data.phone_sets, &phone_cfg, |e| {
        log::info!("seed {} {}", cfg.seed, e.to_json_line())
    })?;
    let phone_accuracy = pre.log.last().map_or(0.0, |e| e.accuracy);
    let word_seed = cfg.seed.wrapping_add(1000);

    let word_cfg = |skip| TrainConfig {
        seed: word_seed,
        skip,
        ..cfg.word_train.clone()
    };
    let train_word = |init: TdnnModel, skip: SkipMode| -> Result<TdnnModel> {
        let set = word_set(&init, &data.train, skip)?;
        Ok(train_word_stage(init, &[set], &word_cfg(skip), |e| {
            log::info!("seed {} {skip} {}", cfg.seed, e.to_json_line())
        })?
        .model)
    };

    let transfer_init = TdnnModel::transfer(
        pre.model.phone_nn().clone(),
        &arch,
        data.normalizer.clone(),
        names.clone(),
        word_seed,
    )?;
    let mut random_init = TdnnModel::random(&arch, word_seed)?;
    random_init.set_normalizer(data.normalizer.clone())?;
    random_init.set_class_names(names)?;

    let transfer = train_word(transfer_init.clone(), SkipMode::None)?;
    let random_model = train_word(random_init, SkipMode::None)?;
    let transfer_score = score_model(&transfer, &data.test, SkipMode::None)?;
    let random_score = score_model(&random_model, &data.test, SkipMode::None)?;
    let seconds = started.elapsed().as_secs_f64();

    let (stride4, stride4_score, stride4_seconds) = if with_stride4 {
        let t = Instant::now();
        let m = train_word(transfer_init, SkipMode::Stride4)?;
        let score = score_model(&m, &data.test, SkipMode::Stride4)?;
        (Some(m), Some(score), Some(t.elapsed().as_secs_f64()))
    } else {
        (None, None, None)
    };

    let report = SeedReport {
        seed: cfg.seed,
        num_test_spans: data.test.truth().spans.len(),
        phone_accuracy,
        transfer: transfer_score,
        random_init: random_score,
        stride4: stride4_score,
        seconds,
        stride4_seconds,
    };
    Ok((
        report,
        SeedModels {
            transfer,
            random_init: random_model,
            stride4,
        },
    ))
}

//! Two-stage TDNN: a phone network applied to spliced feature context and a
//! word network applied to time max-pooled phone outputs.

mod io;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use io::{from_bytes, load, save, to_bytes, FORMAT_VERSION, MAGIC};

use crate::error::{Error, Result};
use crate::features::{FeatureNormalizer, FrontendConfig};

pub const FILLER_NAME: &str = "filler";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// Fully connected layer. Weights are stored row-major by input index:
/// `weights[i * out_dim + o]` connects input `i` to output `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    name: String,
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(
        name: impl Into<String>,
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
        activation: Activation,
    ) -> Result<Self> {
        let name = name.into();
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!(
                "{name}: dimensions must be positive"
            )));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::shape(
                "dense weights",
                in_dim * out_dim,
                weights.len(),
            ));
        }
        if bias.len() != out_dim {
            return Err(Error::shape("dense bias", out_dim, bias.len()));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("{name}: non-finite parameter")));
        }
        Ok(Self {
            name,
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(
        name: impl Into<String>,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        Self::new(
            name,
            in_dim,
            out_dim,
            vec![0.0; in_dim * out_dim],
            vec![0.0; out_dim],
            activation,
        )
    }

    /// Uniform in `±sqrt(6 / (in + out))`, zero bias.
    pub fn glorot<R: Rng>(
        name: impl Into<String>,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt() as f32;
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        Self::new(
            name,
            in_dim,
            out_dim,
            weights,
            vec![0.0; out_dim],
            activation,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Multiplicative weights (biases excluded).
    pub fn weight_count(&self) -> usize {
        self.in_dim * self.out_dim
    }

    pub(crate) fn set_params(&mut self, weights: Vec<f32>, bias: Vec<f32>) {
        debug_assert_eq!(weights.len(), self.weights.len());
        debug_assert_eq!(bias.len(), self.bias.len());
        self.weights = weights;
        self.bias = bias;
    }

    /// `out = act(input · W + b)`. Performs exactly `in_dim * out_dim`
    /// multiplications. Lengths are the caller's responsibility.
    pub fn forward(&self, input: &[f32], out: &mut [f32]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        out.copy_from_slice(&self.bias);
        for (x, row) in input.iter().zip(self.weights.chunks_exact(self.out_dim)) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        if self.activation == Activation::Relu {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
}

/// Phone stage: dense layers over `left + 1 + right` spliced feature frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneNn {
    pub(crate) layers: Vec<DenseLayer>,
    pub(crate) left_context: usize,
    pub(crate) right_context: usize,
}

impl PhoneNn {
    pub fn new(layers: Vec<DenseLayer>, left_context: usize, right_context: usize) -> Result<Self> {
        let nn = Self {
            layers,
            left_context,
            right_context,
        };
        nn.check().map_err(Error::Config)?;
        Ok(nn)
    }

    fn check(&self) -> std::result::Result<(), String> {
        check_chain("phone", &self.layers)?;
        let first = &self.layers[0];
        if !first.in_dim.is_multiple_of(self.context_len()) {
            return Err(format!(
                "phone input {} is not a multiple of context {}",
                first.in_dim,
                self.context_len()
            ));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn left_context(&self) -> usize {
        self.left_context
    }

    pub fn right_context(&self) -> usize {
        self.right_context
    }

    /// Frames spliced into one phone-network input.
    pub fn context_len(&self) -> usize {
        self.left_context + 1 + self.right_context
    }

    pub fn feat_dim(&self) -> usize {
        self.layers[0].in_dim / self.context_len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::weight_count).sum()
    }
}

/// Word stage: dense layers over `pooled_context` max-pooled phone vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct WordNn {
    pub(crate) layers: Vec<DenseLayer>,
    pub(crate) pooled_context: usize,
    pub(crate) pool_size: usize,
    pub(crate) pool_stride: usize,
}

impl WordNn {
    pub fn new(
        layers: Vec<DenseLayer>,
        pooled_context: usize,
        pool_size: usize,
        pool_stride: usize,
    ) -> Result<Self> {
        let nn = Self {
            layers,
            pooled_context,
            pool_size,
            pool_stride,
        };
        nn.check().map_err(Error::Config)?;
        Ok(nn)
    }

    fn check(&self) -> std::result::Result<(), String> {
        check_chain("word", &self.layers)?;
        if self.pooled_context == 0 || self.pool_size == 0 || self.pool_stride == 0 {
            return Err("pooling geometry must be positive".into());
        }
        if !self.layers[0].in_dim.is_multiple_of(self.pooled_context) {
            return Err(format!(
                "word input {} is not a multiple of pooled context {}",
                self.layers[0].in_dim, self.pooled_context
            ));
        }
        if self.layers.last().unwrap().activation != Activation::Linear {
            return Err("last word layer must be linear (softmax follows)".into());
        }
        Ok(())
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn pooled_context(&self) -> usize {
        self.pooled_context
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn pool_stride(&self) -> usize {
        self.pool_stride
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::weight_count).sum()
    }
}

fn check_chain(stage: &str, layers: &[DenseLayer]) -> std::result::Result<(), String> {
    if layers.is_empty() {
        return Err(format!("{stage} network has no layers"));
    }
    for pair in layers.windows(2) {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(format!(
                "{} outputs {} but {} expects {}",
                pair[0].name, pair[0].out_dim, pair[1].name, pair[1].in_dim
            ));
        }
    }
    Ok(())
}

/// Sizes that fully determine a model's shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub feat_dim: usize,
    pub left_context: usize,
    pub right_context: usize,
    /// Hidden widths of the phone network (ReLU).
    pub phone_hidden: Vec<usize>,
    /// Width of the last (linear) phone layer.
    pub phone_outputs: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub pooled_context: usize,
    /// Hidden widths of the word network (ReLU).
    pub word_hidden: Vec<usize>,
    pub num_keywords: usize,
}

impl Architecture {
    /// 41-dim FBANK, ±5 frames, 3×128 hidden, 132 phone outputs, pool 5/4
    /// over 17 pooled frames, 64 hidden word units.
    pub fn standard(num_keywords: usize) -> Self {
        Self {
            feat_dim: crate::features::NUM_MELS,
            left_context: 5,
            right_context: 5,
            phone_hidden: vec![128, 128, 128],
            phone_outputs: 132,
            pool_size: 5,
            pool_stride: 4,
            pooled_context: 17,
            word_hidden: vec![64],
            num_keywords,
        }
    }

    pub fn context_len(&self) -> usize {
        self.left_context + 1 + self.right_context
    }

    pub fn build_phone_nn(&self, seed: u64) -> Result<PhoneNn> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![self.feat_dim * self.context_len()];
        dims.extend(&self.phone_hidden);
        dims.push(self.phone_outputs);
        let layers = build_layers("phone", &dims, &mut rng)?;
        PhoneNn::new(layers, self.left_context, self.right_context)
    }

    pub fn build_word_nn(&self, seed: u64) -> Result<WordNn> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut dims = vec![self.phone_outputs * self.pooled_context];
        dims.extend(&self.word_hidden);
        dims.push(self.num_keywords + 1);
        let layers = build_layers("word", &dims, &mut rng)?;
        WordNn::new(
            layers,
            self.pooled_context,
            self.pool_size,
            self.pool_stride,
        )
    }
}

fn build_layers(stage: &str, dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<DenseLayer>> {
    let n = dims.len() - 1;
    (0..n)
        .map(|i| {
            let act = if i + 1 == n {
                Activation::Linear
            } else {
                Activation::Relu
            };
            DenseLayer::glorot(format!("{stage}-{}", i + 1), dims[i], dims[i + 1], act, rng)
        })
        .collect()
}

/// Complete keyword spotter: both networks plus the frontend and normalizer
/// they were trained with. `class_names` follows softmax output order and
/// its last entry is the filler class.
#[derive(Debug, Clone, PartialEq)]
pub struct TdnnModel {
    pub(crate) phone_nn: PhoneNn,
    pub(crate) word_nn: WordNn,
    pub(crate) frontend: FrontendConfig,
    pub(crate) normalizer: FeatureNormalizer,
    pub(crate) class_names: Vec<String>,
}

impl TdnnModel {
    pub fn from_parts(
        phone_nn: PhoneNn,
        word_nn: WordNn,
        frontend: FrontendConfig,
        normalizer: FeatureNormalizer,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let model = Self {
            phone_nn,
            word_nn,
            frontend,
            normalizer,
            class_names,
        };
        model.check().map_err(Error::Config)?;
        Ok(model)
    }

    /// Randomly initialized model with the given shape, identity normalizer
    /// and default frontend (with `num_mels = feat_dim`).
    pub fn random(arch: &Architecture, seed: u64) -> Result<Self> {
        if arch.num_keywords == 0 {
            return Err(Error::Config("at least one keyword is required".into()));
        }
        let frontend = FrontendConfig {
            num_mels: arch.feat_dim,
            ..FrontendConfig::default()
        };
        Self::from_parts(
            arch.build_phone_nn(seed)?,
            arch.build_word_nn(seed)?,
            frontend,
            FeatureNormalizer::identity(arch.feat_dim),
            default_class_names(arch.num_keywords),
        )
    }

    /// The standard network with `num_keywords + 1` outputs, seeded init.
    pub fn build_default(num_keywords: usize, seed: u64) -> Result<Self> {
        Self::random(&Architecture::standard(num_keywords), seed)
    }

    /// Keeps `phone_nn` and attaches a freshly initialized word network of
    /// the given shape; used to start word-stage training after phone
    /// pretraining.
    pub fn transfer(
        phone_nn: PhoneNn,
        arch: &Architecture,
        normalizer: FeatureNormalizer,
        class_names: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        let frontend = FrontendConfig {
            num_mels: arch.feat_dim,
            ..FrontendConfig::default()
        };
        Self::from_parts(
            phone_nn,
            arch.build_word_nn(seed)?,
            frontend,
            normalizer,
            class_names,
        )
    }

    fn check(&self) -> std::result::Result<(), String> {
        self.phone_nn.check()?;
        self.word_nn.check()?;
        let feat = self.phone_nn.feat_dim();
        if feat != self.normalizer.dim() {
            return Err(format!(
                "normalizer has {} dims, phone network expects {feat}",
                self.normalizer.dim()
            ));
        }
        if feat != self.frontend.num_mels {
            return Err(format!(
                "frontend produces {} mels, phone network expects {feat}",
                self.frontend.num_mels
            ));
        }
        let pooled_in = self.phone_nn.output_dim() * self.word_nn.pooled_context;
        if pooled_in != self.word_nn.input_dim() {
            return Err(format!(
                "word input {} != phone outputs {} x pooled context {}",
                self.word_nn.input_dim(),
                self.phone_nn.output_dim(),
                self.word_nn.pooled_context
            ));
        }
        if self.class_names.len() != self.word_nn.num_classes() {
            return Err(format!(
                "{} class names for {} word outputs",
                self.class_names.len(),
                self.word_nn.num_classes()
            ));
        }
        if self.class_names.len() < 2 {
            return Err("need at least one keyword and the filler class".into());
        }
        if let Some(n) = self
            .class_names
            .iter()
            .find(|n| n.is_empty() || n.contains(['\n', '\r']))
        {
            return Err(format!("invalid class name {n:?}"));
        }
        Ok(())
    }

    pub fn phone_nn(&self) -> &PhoneNn {
        &self.phone_nn
    }

    pub fn word_nn(&self) -> &WordNn {
        &self.word_nn
    }

    pub(crate) fn phone_nn_mut(&mut self) -> &mut PhoneNn {
        &mut self.phone_nn
    }

    pub(crate) fn word_nn_mut(&mut self) -> &mut WordNn {
        &mut self.word_nn
    }

    pub fn frontend(&self) -> &FrontendConfig {
        &self.frontend
    }

    pub fn normalizer(&self) -> &FeatureNormalizer {
        &self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: FeatureNormalizer) -> Result<()> {
        if normalizer.dim() != self.phone_nn.feat_dim() {
            return Err(Error::shape(
                "normalizer",
                self.phone_nn.feat_dim(),
                normalizer.dim(),
            ));
        }
        self.normalizer = normalizer;
        Ok(())
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn set_class_names(&mut self, names: Vec<String>) -> Result<()> {
        let old = std::mem::replace(&mut self.class_names, names);
        if let Err(e) = self.check() {
            self.class_names = old;
            return Err(Error::Config(e));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_keywords(&self) -> usize {
        self.class_names.len() - 1
    }

    pub fn filler_index(&self) -> usize {
        self.class_names.len() - 1
    }

    pub fn feat_dim(&self) -> usize {
        self.phone_nn.feat_dim()
    }

    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.phone_nn.layers.iter().chain(&self.word_nn.layers)
    }

    /// Sum of `in_dim * out_dim` over every layer.
    pub fn param_count(&self) -> usize {
        self.layers().map(DenseLayer::weight_count).sum()
    }

    pub fn bias_count(&self) -> usize {
        self.layers().map(|l| l.out_dim).sum()
    }

    /// Input frames seen by one word output without frame skipping:
    /// `(pooled_context - 1) * pool_stride + pool_size` phone outputs, each
    /// spanning `context_len` frames.
    pub fn receptive_field(&self) -> usize {
        let w = &self.word_nn;
        (w.pooled_context - 1) * w.pool_stride + w.pool_size + self.phone_nn.context_len() - 1
    }

    pub fn summary(&self) -> ModelSummary<'_> {
        ModelSummary(self)
    }
}

pub fn default_class_names(num_keywords: usize) -> Vec<String> {
    (0..num_keywords)
        .map(|k| format!("keyword_{k}"))
        .chain(std::iter::once(FILLER_NAME.to_string()))
        .collect()
}

/// Per-layer table of inputs, outputs and weight counts.
pub struct ModelSummary<'a>(&'a TdnnModel);

impl fmt::Display for ModelSummary<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.0;
        writeln!(
            f,
            "{:<10} {:>8} {:>8} {:>10}",
            "Layer", "Inputs", "Outputs", "# Weights"
        )?;
        for l in m.layers() {
            writeln!(
                f,
                "{:<10} {:>8} {:>8} {:>10}",
                l.name,
                l.in_dim,
                l.out_dim,
                l.weight_count()
            )?;
        }
        writeln!(
            f,
            "{:<10} {:>8} {:>8} {:>10}",
            "Total",
            "",
            "",
            m.param_count()
        )?;
        writeln!(f)?;
        writeln!(f, "biases: {}", m.bias_count())?;
        writeln!(
            f,
            "context: {} frames per phone output, {} frames per word output",
            m.phone_nn.context_len(),
            m.receptive_field()
        )?;
        write!(f, "classes: {}", m.class_names.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layer_counts() {
        let m = TdnnModel::build_default(1, 0).unwrap();
        let counts: Vec<usize> = m.layers().map(DenseLayer::weight_count).collect();
        assert_eq!(counts, vec![57728, 16384, 16384, 16896, 143616, 128]);
        assert_eq!(m.param_count(), 251_136);
        let dims: Vec<(usize, usize)> = m.layers().map(|l| (l.in_dim(), l.out_dim())).collect();
        assert_eq!(
            dims,
            vec![
                (451, 128),
                (128, 128),
                (128, 128),
                (128, 132),
                (2244, 64),
                (64, 2)
            ]
        );
    }

    #[test]
    fn ten_keywords_total() {
        let m = TdnnModel::build_default(10, 0).unwrap();
        assert_eq!(m.word_nn().layers()[1].out_dim(), 11);
        assert_eq!(m.param_count(), 251_136 - 128 + 64 * 11);
        assert_eq!(m.param_count(), 251_712);
    }

    #[test]
    fn geometry_chain() {
        let m = TdnnModel::build_default(1, 0).unwrap();
        assert_eq!(m.phone_nn().context_len() * 41, 451);
        assert_eq!(
            m.phone_nn().output_dim() * m.word_nn().pooled_context(),
            2244
        );
        assert_eq!(m.receptive_field(), 79);
    }

    #[test]
    fn activations_follow_design() {
        let m = TdnnModel::build_default(1, 0).unwrap();
        let acts: Vec<Activation> = m.layers().map(DenseLayer::activation).collect();
        use Activation::*;
        assert_eq!(acts, vec![Relu, Relu, Relu, Linear, Relu, Linear]);
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let m = TdnnModel::build_default(1, 3).unwrap();
        for l in m.layers() {
            let limit = (6.0 / (l.in_dim() + l.out_dim()) as f64).sqrt() as f32;
            assert!(l.weights().iter().all(|w| w.abs() <= limit));
            assert!(l.bias().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn seeded_init_is_deterministic() {
        assert_eq!(
            TdnnModel::build_default(2, 9).unwrap(),
            TdnnModel::build_default(2, 9).unwrap()
        );
        assert_ne!(
            TdnnModel::build_default(2, 9).unwrap(),
            TdnnModel::build_default(2, 10).unwrap()
        );
    }

    #[test]
    fn one_by_one_layer() {
        let l = DenseLayer::new("x", 1, 1, vec![2.0], vec![0.5], Activation::Linear).unwrap();
        assert_eq!(l.weight_count(), 1);
        let mut out = [0.0];
        l.forward(&[3.0], &mut out);
        assert_eq!(out, [6.5]);
    }

    #[test]
    fn broken_chain_rejected() {
        let a = DenseLayer::zeros("a", 4, 3, Activation::Relu).unwrap();
        let b = DenseLayer::zeros("b", 2, 2, Activation::Linear).unwrap();
        assert!(PhoneNn::new(vec![a, b], 1, 0).is_err());
    }

    #[test]
    fn summary_mentions_total() {
        let m = TdnnModel::build_default(1, 0).unwrap();
        let text = m.summary().to_string();
        assert!(text.contains("phone-1"));
        assert!(text.contains("251136"));
    }
}

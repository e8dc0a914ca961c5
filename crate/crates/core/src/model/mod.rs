//! Model configuration, the shared classifier interface and inference helpers.

pub mod checkpoint;
pub mod unicorn;

use std::fmt::Write as _;

use crate::data::{ModalityMask, SampleRecord};
use crate::error::{Error, Result};
use crate::eval::baseline::{AttentionMil, SingleStream};
use crate::graph::{softmax_vec, Graph, Var};
use crate::kv::KeyValues;
use crate::params::ParamStore;
use crate::rng::Rng;

pub use unicorn::{cls_to_mt_attention, forward, predict, ForwardTrace, ModelParams, StageAttention};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_modalities: usize,
    pub n_classes: usize,
    pub feat_dim: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub blocks_per_expert: usize,
    pub blocks_aggregator: usize,
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_modalities: 4,
            n_classes: 5,
            feat_dim: 768,
            model_dim: 256,
            n_heads: 4,
            blocks_per_expert: 2,
            blocks_aggregator: 2,
            dropout_p: 0.1,
        }
    }
}

pub(crate) const MODEL_KEYS: [&str; 8] = [
    "n_modalities",
    "n_classes",
    "feat_dim",
    "model_dim",
    "n_heads",
    "blocks_per_expert",
    "blocks_aggregator",
    "dropout",
];

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_modalities,
            self.n_classes,
            self.feat_dim,
            self.model_dim,
            self.n_heads,
            self.blocks_per_expert,
            self.blocks_aggregator,
        ];
        if counts.iter().any(|c| *c == 0) {
            return Err(Error::Config(format!("all model counts must be >= 1: {self:?}")));
        }
        if self.model_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "n_heads {} does not divide model_dim {}",
                self.n_heads, self.model_dim
            )));
        }
        if self.n_modalities > ModalityMask::MAX_MODALITIES {
            return Err(Error::Config(format!("at most 64 modalities, got {}", self.n_modalities)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }

    /// Reads any of [`MODEL_KEYS`] present in `kv` over `self`.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.read_into("n_modalities", &mut self.n_modalities)?;
        kv.read_into("n_classes", &mut self.n_classes)?;
        kv.read_into("feat_dim", &mut self.feat_dim)?;
        kv.read_into("model_dim", &mut self.model_dim)?;
        kv.read_into("n_heads", &mut self.n_heads)?;
        kv.read_into("blocks_per_expert", &mut self.blocks_per_expert)?;
        kv.read_into("blocks_aggregator", &mut self.blocks_aggregator)?;
        kv.read_into("dropout", &mut self.dropout_p)?;
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_modalities={}", self.n_modalities);
        let _ = writeln!(s, "n_classes={}", self.n_classes);
        let _ = writeln!(s, "feat_dim={}", self.feat_dim);
        let _ = writeln!(s, "model_dim={}", self.model_dim);
        let _ = writeln!(s, "n_heads={}", self.n_heads);
        let _ = writeln!(s, "blocks_per_expert={}", self.blocks_per_expert);
        let _ = writeln!(s, "blocks_aggregator={}", self.blocks_aggregator);
        let _ = writeln!(s, "dropout={}", self.dropout_p);
        s
    }

    /// Checks that `sample` can be forwarded under `mask`.
    pub fn check_input(&self, sample: &SampleRecord, mask: ModalityMask) -> Result<()> {
        if mask.is_empty() {
            return Err(Error::InvalidArgument(format!("empty modality mask for {}", sample.sample_id)));
        }
        if !mask.is_subset(sample.present()) {
            return Err(Error::InvalidArgument(format!(
                "mask {mask} requests bags missing from sample {} (present: {})",
                sample.sample_id,
                sample.present()
            )));
        }
        for m in mask.iter() {
            if m >= self.n_modalities {
                return Err(Error::InvalidArgument(format!("modality {m} outside the model's {}", self.n_modalities)));
            }
            let bag = &sample.bags[&m];
            if bag.n_patches() == 0 {
                return Err(Error::Data(format!("empty bag {}", bag.slide_id)));
            }
            if bag.feat_dim() != self.feat_dim {
                return Err(Error::ConfigMismatch(format!(
                    "bag {} has feature width {}, model expects feat_dim {}",
                    bag.slide_id,
                    bag.feat_dim(),
                    self.feat_dim
                )));
            }
        }
        if sample.label >= self.n_classes {
            return Err(Error::Data(format!(
                "sample {} has label {} but the model has {} classes",
                sample.sample_id, sample.label, self.n_classes
            )));
        }
        Ok(())
    }
}

/// Graph nodes every classifier exposes.
#[derive(Clone, Copy, Debug)]
pub struct GraphOutput {
    /// `1 x n_classes`.
    pub logits: Var,
    /// `1 x model_dim` representation feeding the head.
    pub features: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Unicorn,
    AttentionMil,
    SingleStream,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Unicorn => "unicorn",
            ModelKind::AttentionMil => "attention_mil",
            ModelKind::SingleStream => "single_stream",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "unicorn" => Ok(ModelKind::Unicorn),
            "attention_mil" => Ok(ModelKind::AttentionMil),
            "single_stream" | "single_stream_transformer" => Ok(ModelKind::SingleStream),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// A multiple-instance classifier over per-modality bags.
pub trait Classifier: Clone + Send + Sync {
    fn kind(&self) -> ModelKind;
    fn config(&self) -> &ModelConfig;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;

    /// Records the forward pass for `sample` restricted to `mask` on `g`.
    fn build<'a>(
        &'a self,
        g: &mut Graph<'a>,
        sample: &'a SampleRecord,
        mask: ModalityMask,
        rng: &mut Rng,
        training: bool,
    ) -> Result<GraphOutput>;
}

/// Inference result of any [`Classifier`].
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
    pub features: Vec<f64>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn infer<M: Classifier>(model: &M, sample: &SampleRecord, mask: ModalityMask) -> Result<Prediction> {
    let mut g = Graph::inference();
    let out = model.build(&mut g, sample, mask, &mut Rng::new(0), false)?;
    let logits = g.value(out.logits).to_vec();
    let probs = softmax_vec(&logits);
    Ok(Prediction {
        class: argmax(&probs),
        probs,
        logits,
        features: g.value(out.features).to_vec(),
    })
}

/// Any of the supported architectures, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Unicorn(ModelParams),
    AttentionMil(AttentionMil),
    SingleStream(SingleStream),
}

impl AnyModel {
    pub fn init(kind: ModelKind, config: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(match kind {
            ModelKind::Unicorn => AnyModel::Unicorn(ModelParams::init(config, seed)?),
            ModelKind::AttentionMil => AnyModel::AttentionMil(AttentionMil::init(config, seed)?),
            ModelKind::SingleStream => AnyModel::SingleStream(SingleStream::init(config, seed)?),
        })
    }

    pub fn as_unicorn(&self) -> Option<&ModelParams> {
        match self {
            AnyModel::Unicorn(m) => Some(m),
            _ => None,
        }
    }
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Unicorn($m) => $e,
            AnyModel::AttentionMil($m) => $e,
            AnyModel::SingleStream($m) => $e,
        }
    };
}

impl Classifier for AnyModel {
    fn kind(&self) -> ModelKind {
        delegate!(self, m => m.kind())
    }

    fn config(&self) -> &ModelConfig {
        delegate!(self, m => m.config())
    }

    fn store(&self) -> &ParamStore {
        delegate!(self, m => m.store())
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        delegate!(self, m => m.store_mut())
    }

    fn build<'a>(
        &'a self,
        g: &mut Graph<'a>,
        sample: &'a SampleRecord,
        mask: ModalityMask,
        rng: &mut Rng,
        training: bool,
    ) -> Result<GraphOutput> {
        delegate!(self, m => m.build(g, sample, mask, rng, training))
    }
}

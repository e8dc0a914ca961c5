//! Comparison models that ignore modality structure, plus their training entry point.
//!
//! * [`AttentionMil`]: every present bag is projected by one shared layer and
//!   pooled into a single vector with gated attention,
//!   `a = softmax(w^T (tanh(V h) * sigm(U h)))`, then classified linearly.
//! * [`SingleStream`]: one shared transformer over `[CLS; all projected patches]`.

use crate::block::{block_forward, filled, init_matrix, BlockParams};
use crate::data::{ModalityMask, SampleRecord, SplitPlan};
use crate::error::Result;
use crate::graph::{Graph, Var, LAYER_NORM_EPS};
use crate::model::{AnyModel, Classifier, GraphOutput, ModelConfig, ModelKind};
use crate::params::{ParamId, ParamStore};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;
use crate::train::{train_model, TrainConfig, TrainOutcome};

/// Projects every bag in `mask` with one shared layer and stacks the rows.
fn project_all<'a>(
    g: &mut Graph<'a>,
    store: &'a ParamStore,
    proj: ParamId,
    proj_bias: ParamId,
    sample: &'a SampleRecord,
    mask: ModalityMask,
) -> Result<Var> {
    let w = g.param(store, proj);
    let b = g.param(store, proj_bias);
    let mut parts = Vec::new();
    for m in mask.iter() {
        let bag = g.constant(sample.bags[&m].matrix());
        let p = g.matmul(bag, w)?;
        parts.push(g.add_row(p, b)?);
    }
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        g.concat_rows(&parts)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMil {
    config: ModelConfig,
    store: ParamStore,
    proj: ParamId,
    proj_bias: ParamId,
    attn_v: ParamId,
    attn_u: ParamId,
    attn_w: ParamId,
    head: ParamId,
    head_bias: ParamId,
}

impl AttentionMil {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::stream(seed, Stream::Init);
        let mut store = ParamStore::new();
        let d = config.model_dim;
        let proj = store.add("mil.proj", init_matrix(config.feat_dim, d, &mut rng), true);
        let proj_bias = store.add("mil.proj_bias", filled(d, 0.0), false);
        let attn_v = store.add("mil.attn_v", init_matrix(d, d, &mut rng), true);
        let attn_u = store.add("mil.attn_u", init_matrix(d, d, &mut rng), true);
        let attn_w = store.add("mil.attn_w", init_matrix(d, 1, &mut rng), true);
        let head = store.add("head.weight", init_matrix(d, config.n_classes, &mut rng), true);
        let head_bias = store.add("head.bias", Tensor::zeros(&[config.n_classes]), false);
        Ok(Self {
            config: config.clone(),
            store,
            proj,
            proj_bias,
            attn_v,
            attn_u,
            attn_w,
            head,
            head_bias,
        })
    }

    fn build_with_weights<'a>(
        &'a self,
        g: &mut Graph<'a>,
        sample: &'a SampleRecord,
        mask: ModalityMask,
    ) -> Result<(GraphOutput, Var)> {
        self.config.check_input(sample, mask)?;
        let s = &self.store;
        let h = project_all(g, s, self.proj, self.proj_bias, sample, mask)?;
        let h = g.gelu(h)?;
        let v = g.param(s, self.attn_v);
        let u = g.param(s, self.attn_u);
        let w = g.param(s, self.attn_w);
        let tv = g.matmul(h, v)?;
        let tv = g.tanh(tv)?;
        let su = g.matmul(h, u)?;
        let su = g.sigmoid(su)?;
        let gated = g.mul(tv, su)?;
        let scores = g.matmul(gated, w)?;
        let scores = g.transpose(scores)?;
        let weights = g.softmax(scores, 1)?;
        let pooled = g.matmul(weights, h)?;
        let head = g.param(s, self.head);
        let hb = g.param(s, self.head_bias);
        let logits = g.matmul(pooled, head)?;
        let logits = g.add_row(logits, hb)?;
        Ok((GraphOutput { logits, features: pooled }, weights))
    }

    /// Pooling weights over all patches of the masked bags, in modality order.
    pub fn attention_weights(&self, sample: &SampleRecord, mask: ModalityMask) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let (_, w) = self.build_with_weights(&mut g, sample, mask)?;
        Ok(g.value(w).to_vec())
    }
}

impl Classifier for AttentionMil {
    fn kind(&self) -> ModelKind {
        ModelKind::AttentionMil
    }
    fn config(&self) -> &ModelConfig {
        &self.config
    }
    fn store(&self) -> &ParamStore {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn build<'a>(
        &'a self,
        g: &mut Graph<'a>,
        sample: &'a SampleRecord,
        mask: ModalityMask,
        _rng: &mut Rng,
        _training: bool,
    ) -> Result<GraphOutput> {
        self.build_with_weights(g, sample, mask).map(|(o, _)| o)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingleStream {
    config: ModelConfig,
    store: ParamStore,
    proj: ParamId,
    proj_bias: ParamId,
    cls: ParamId,
    blocks: Vec<BlockParams>,
    head_norm: (ParamId, ParamId),
    head: ParamId,
    head_bias: ParamId,
}

impl SingleStream {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::stream(seed, Stream::Init);
        let mut store = ParamStore::new();
        let d = config.model_dim;
        let proj = store.add("stream.proj", init_matrix(config.feat_dim, d, &mut rng), true);
        let proj_bias = store.add("stream.proj_bias", filled(d, 0.0), false);
        let cls = store.add("stream.cls", init_matrix(1, d, &mut rng), true);
        let blocks = (0..config.blocks_per_expert)
            .map(|b| BlockParams::init(&mut store, &format!("stream.block{b}"), d, config.n_heads, config.dropout_p, &mut rng))
            .collect::<Result<_>>()?;
        let head_norm = (
            store.add("head.norm.gain", filled(d, 1.0), false),
            store.add("head.norm.bias", filled(d, 0.0), false),
        );
        let head = store.add("head.weight", init_matrix(d, config.n_classes, &mut rng), true);
        let head_bias = store.add("head.bias", Tensor::zeros(&[config.n_classes]), false);
        Ok(Self {
            config: config.clone(),
            store,
            proj,
            proj_bias,
            cls,
            blocks,
            head_norm,
            head,
            head_bias,
        })
    }
}

impl Classifier for SingleStream {
    fn kind(&self) -> ModelKind {
        ModelKind::SingleStream
    }
    fn config(&self) -> &ModelConfig {
        &self.config
    }
    fn store(&self) -> &ParamStore {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn build<'a>(
        &'a self,
        g: &mut Graph<'a>,
        sample: &'a SampleRecord,
        mask: ModalityMask,
        rng: &mut Rng,
        training: bool,
    ) -> Result<GraphOutput> {
        self.config.check_input(sample, mask)?;
        let s = &self.store;
        let patches = project_all(g, s, self.proj, self.proj_bias, sample, mask)?;
        let cls = g.param(s, self.cls);
        let mut x = g.concat_rows(&[cls, patches])?;
        for b in &self.blocks {
            x = block_forward(g, x, b, s, rng, training)?.0;
        }
        let cls = g.slice_rows(x, 0, 1)?;
        let (gain, bias) = (g.param(s, self.head_norm.0), g.param(s, self.head_norm.1));
        let features = g.layer_norm(cls, gain, bias, LAYER_NORM_EPS)?;
        let head = g.param(s, self.head);
        let hb = g.param(s, self.head_bias);
        let logits = g.matmul(features, head)?;
        let logits = g.add_row(logits, hb)?;
        Ok(GraphOutput { logits, features })
    }
}

/// Which comparison model to train; dimensions and recipe come from the configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    AttentionMil,
    SingleStreamTransformer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Trains a baseline with exactly the pipeline used for the two-stage model.
pub fn train_baseline(spec: &BaselineSpec, records: &[SampleRecord], split: &SplitPlan) -> Result<TrainOutcome<AnyModel>> {
    let kind = match spec.kind {
        BaselineKind::AttentionMil => ModelKind::AttentionMil,
        BaselineKind::SingleStreamTransformer => ModelKind::SingleStream,
    };
    let init = AnyModel::init(kind, &spec.model, spec.train.seed)?;
    train_model(init, records, split, &spec.train)
}

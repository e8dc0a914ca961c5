//! The two-stage model.
//!
//! Stage one runs one expert per present modality: the bag is projected to
//! the model width, the modality's learned token (MT) is prepended, and the
//! expert's blocks run over `[MT; patches]`. The MT output row summarizes the
//! bag. Stage two runs the aggregator over `[CLS; MT_m for present m]` with
//! modalities in ascending id order, and a linear head reads the layer-normed
//! CLS output.
//! Absent modalities contribute no tokens.

use std::collections::BTreeMap;

use crate::block::{block_forward, filled, init_matrix, AttentionRecord, BlockParams};
use crate::data::{ModalityMask, SampleRecord};
use crate::error::Result;
use crate::graph::{softmax_vec, Graph, LAYER_NORM_EPS};
use crate::model::{argmax, Classifier, GraphOutput, ModelConfig, ModelKind};
use crate::params::{ParamId, ParamStore};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertParams {
    pub proj: ParamId,
    pub proj_bias: ParamId,
    pub token: ParamId,
    pub blocks: Vec<BlockParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    store: ParamStore,
    pub experts: Vec<ExpertParams>,
    pub aggregator: Vec<BlockParams>,
    pub cls: ParamId,
    pub head_norm_gain: ParamId,
    pub head_norm_bias: ParamId,
    pub head: ParamId,
    pub head_bias: ParamId,
}

impl ModelParams {
    /// Truncated-normal (sigma 0.02) matrices and tokens, zero biases, unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::stream(seed, Stream::Init);
        let mut store = ParamStore::new();
        let d = config.model_dim;
        let mut experts = Vec::with_capacity(config.n_modalities);
        for m in 0..config.n_modalities {
            let proj = store.add(format!("expert{m}.proj"), init_matrix(config.feat_dim, d, &mut rng), true);
            let proj_bias = store.add(format!("expert{m}.proj_bias"), filled(d, 0.0), false);
            let token = store.add(format!("expert{m}.token"), init_matrix(1, d, &mut rng), true);
            let blocks = (0..config.blocks_per_expert)
                .map(|b| {
                    BlockParams::init(
                        &mut store,
                        &format!("expert{m}.block{b}"),
                        d,
                        config.n_heads,
                        config.dropout_p,
                        &mut rng,
                    )
                })
                .collect::<Result<_>>()?;
            experts.push(ExpertParams {
                proj,
                proj_bias,
                token,
                blocks,
            });
        }
        let aggregator = (0..config.blocks_aggregator)
            .map(|b| {
                BlockParams::init(&mut store, &format!("aggregator.block{b}"), d, config.n_heads, config.dropout_p, &mut rng)
            })
            .collect::<Result<_>>()?;
        let cls = store.add("aggregator.cls", init_matrix(1, d, &mut rng), true);
        let head_norm_gain = store.add("head.norm.gain", filled(d, 1.0), false);
        let head_norm_bias = store.add("head.norm.bias", filled(d, 0.0), false);
        let head = store.add("head.weight", init_matrix(d, config.n_classes, &mut rng), true);
        let head_bias = store.add("head.bias", Tensor::zeros(&[config.n_classes]), false);
        Ok(Self {
            config: config.clone(),
            store,
            experts,
            aggregator,
            cls,
            head_norm_gain,
            head_norm_bias,
            head,
            head_bias,
        })
    }

    /// Builds the graph and also returns the attention records of both stages.
    pub fn build_traced<'a>(
        &'a self,
        g: &mut Graph<'a>,
        sample: &'a SampleRecord,
        mask: ModalityMask,
        rng: &mut Rng,
        training: bool,
    ) -> Result<(GraphOutput, StageAttention)> {
        self.config.check_input(sample, mask)?;
        let store = &self.store;
        let mut expert_attention = BTreeMap::new();
        let mut tokens = vec![g.param(store, self.cls)];
        for m in mask.iter() {
            let e = &self.experts[m];
            let bag = g.constant(sample.bags[&m].matrix());
            let w = g.param(store, e.proj);
            let b = g.param(store, e.proj_bias);
            let projected = g.matmul(bag, w)?;
            let projected = g.add_row(projected, b)?;
            let token = g.param(store, e.token);
            let mut x = g.concat_rows(&[token, projected])?;
            let mut records = Vec::with_capacity(e.blocks.len());
            for block in &e.blocks {
                let (y, rec) = block_forward(g, x, block, store, rng, training)?;
                x = y;
                records.push(rec);
            }
            expert_attention.insert(m, records);
            tokens.push(g.slice_rows(x, 0, 1)?);
        }
        let mut x = g.concat_rows(&tokens)?;
        let mut aggregator_attention = Vec::with_capacity(self.aggregator.len());
        for block in &self.aggregator {
            let (y, rec) = block_forward(g, x, block, store, rng, training)?;
            x = y;
            aggregator_attention.push(rec);
        }
        let cls = g.slice_rows(x, 0, 1)?;
        let (gain, bias) = (g.param(store, self.head_norm_gain), g.param(store, self.head_norm_bias));
        let features = g.layer_norm(cls, gain, bias, LAYER_NORM_EPS)?;
        let head = g.param(store, self.head);
        let head_bias = g.param(store, self.head_bias);
        let logits = g.matmul(features, head)?;
        let logits = g.add_row(logits, head_bias)?;
        Ok((
            GraphOutput { logits, features },
            StageAttention {
                modalities: mask.iter().collect(),
                expert: expert_attention,
                aggregator: aggregator_attention,
            },
        ))
    }
}

/// Attention captured from both stages of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StageAttention {
    /// Aggregator token order after CLS.
    pub modalities: Vec<usize>,
    pub expert: BTreeMap<usize, Vec<AttentionRecord>>,
    pub aggregator: Vec<AttentionRecord>,
}

impl Classifier for ModelParams {
    fn kind(&self) -> ModelKind {
        ModelKind::Unicorn
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
        self.build_traced(g, sample, mask, rng, training).map(|(o, _)| o)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub attention: StageAttention,
    /// Layer-normed CLS vector the head reads (length `model_dim`).
    pub cls: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    pub fn modalities(&self) -> &[usize] {
        &self.attention.modalities
    }

    pub fn predicted(&self) -> usize {
        argmax(&self.probs)
    }
}

pub fn forward(
    sample: &SampleRecord,
    mask: ModalityMask,
    params: &ModelParams,
    rng: &mut Rng,
    training: bool,
) -> Result<ForwardTrace> {
    let mut g = if training { Graph::new() } else { Graph::inference() };
    let (out, attention) = params.build_traced(&mut g, sample, mask, rng, training)?;
    let logits = g.value(out.logits).to_vec();
    Ok(ForwardTrace {
        attention,
        cls: g.value(out.features).to_vec(),
        probs: softmax_vec(&logits),
        logits,
    })
}

/// Predicted class (ties to the lower index) and class probabilities.
pub fn predict(sample: &SampleRecord, mask: ModalityMask, params: &ModelParams) -> Result<(usize, Vec<f64>)> {
    let t = forward(sample, mask, params, &mut Rng::new(0), false)?;
    Ok((t.predicted(), t.probs))
}

/// Head- and layer-averaged attention from CLS to each modality token in the
/// aggregator, indexed by modality id. Modalities absent from the pass map to `None`.
pub fn cls_to_mt_attention(trace: &ForwardTrace, n_modalities: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; n_modalities];
    let layers = &trace.attention.aggregator;
    if layers.is_empty() {
        return out;
    }
    let means: Vec<Tensor> = layers.iter().map(AttentionRecord::head_mean).collect();
    for (pos, m) in trace.modalities().iter().enumerate() {
        let total: f64 = means.iter().map(|a| a.at(0, pos + 1)).sum();
        if *m < n_modalities {
            out[*m] = Some(total / means.len() as f64);
        }
    }
    out
}

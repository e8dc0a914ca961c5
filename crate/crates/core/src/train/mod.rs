//! Training recipe: batch size one, gradient accumulation, domain dropout,
//! cross-entropy, AdamW, and selection of the epoch with the best validation
//! macro-F1.

pub mod optim;

use std::fmt::Write as _;

use crate::data::{ModalityMask, Part, SampleRecord, SplitPlan};
use crate::error::{Error, Result};
use crate::eval::metrics::{compute_metrics, Metrics};
use crate::graph::Graph;
use crate::kv::KeyValues;
use crate::model::{infer, Classifier, ModelConfig, ModelParams};
use crate::rng::{Rng, Stream, ALGORITHM_ID};

pub use optim::{adamw_step, OptimizerState};

pub const BATCH_SIZE: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub accum_steps: usize,
    pub domain_dropout_p: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 2.0e-5,
            weight_decay: 2.0e-5,
            accum_steps: 16,
            domain_dropout_p: 0.7,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

pub(crate) const TRAIN_KEYS: [&str; 9] = [
    "epochs",
    "lr",
    "weight_decay",
    "accum_steps",
    "domain_dropout",
    "beta1",
    "beta2",
    "adam_eps",
    "seed",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.accum_steps == 0 {
            return Err(Error::Config("accum_steps must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.domain_dropout_p) {
            return Err(Error::Config(format!(
                "domain_dropout {} outside [0, 1)",
                self.domain_dropout_p
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0 && self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("lr and weight_decay must be finite and non-negative".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.adam_eps > 0.0) {
            return Err(Error::Config("invalid Adam betas or eps".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.read_into("epochs", &mut self.epochs)?;
        kv.read_into("lr", &mut self.lr)?;
        kv.read_into("weight_decay", &mut self.weight_decay)?;
        kv.read_into("accum_steps", &mut self.accum_steps)?;
        kv.read_into("domain_dropout", &mut self.domain_dropout_p)?;
        kv.read_into("beta1", &mut self.beta1)?;
        kv.read_into("beta2", &mut self.beta2)?;
        kv.read_into("adam_eps", &mut self.adam_eps)?;
        kv.read_into("seed", &mut self.seed)?;
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "weight_decay={}", self.weight_decay);
        let _ = writeln!(s, "accum_steps={}", self.accum_steps);
        let _ = writeln!(s, "batch_size={BATCH_SIZE}");
        let _ = writeln!(s, "domain_dropout={}", self.domain_dropout_p);
        let _ = writeln!(s, "beta1={}", self.beta1);
        let _ = writeln!(s, "beta2={}", self.beta2);
        let _ = writeln!(s, "adam_eps={}", self.adam_eps);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "rng={ALGORITHM_ID}");
        s
    }
}

/// Keeps one uniformly chosen present modality and drops each other one with probability `p`.
pub fn sample_domain_mask(present: ModalityMask, rng: &mut Rng, p: f64) -> Result<ModalityMask> {
    if present.is_empty() {
        return Err(Error::InvalidArgument("domain dropout over an empty modality set".into()));
    }
    let ids: Vec<usize> = present.iter().collect();
    let kept = ids[rng.below(ids.len())];
    let mut out = ModalityMask::single(kept);
    for &m in &ids {
        if m != kept && !rng.bernoulli(p) {
            out = out.with(m);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub best: M,
    /// 1-based epoch of `best`; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

pub fn render_history(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch\ttrain_loss\tval_f1\tval_acc\n");
    for h in history {
        let _ = writeln!(s, "{}\t{:.8}\t{:.8}\t{:.8}", h.epoch, h.train_loss, h.val_f1, h.val_acc);
    }
    s
}

/// Forward with full masks and `training = false`; returns metrics and predictions.
pub fn evaluate<M: Classifier>(model: &M, records: &[&SampleRecord]) -> Result<(Metrics, Vec<usize>)> {
    evaluate_masked(model, records, |r| Some(r.present()))
}

/// Like [`evaluate`] but with a per-sample mask; samples mapped to `None` are skipped.
pub fn evaluate_masked<M: Classifier>(
    model: &M,
    records: &[&SampleRecord],
    mask_for: impl Fn(&SampleRecord) -> Option<ModalityMask>,
) -> Result<(Metrics, Vec<usize>)> {
    let mut truths = Vec::with_capacity(records.len());
    let mut preds = Vec::with_capacity(records.len());
    for r in records {
        let Some(mask) = mask_for(r) else { continue };
        truths.push(r.label);
        preds.push(infer(model, r, mask)?.class);
    }
    Ok((compute_metrics(&truths, &preds, model.config().n_classes)?, preds))
}

/// Forward, cross-entropy and backward for one sample; gradients are added to the model's store.
pub fn accumulate_sample<M: Classifier>(
    model: &mut M,
    sample: &SampleRecord,
    mask: ModalityMask,
    rng: &mut Rng,
) -> Result<f64> {
    let (loss, grads) = {
        let mut g = Graph::new();
        let out = model.build(&mut g, sample, mask, rng, true)?;
        let loss = g.cross_entropy(out.logits, sample.label)?;
        (g.value(loss)[0], g.backward(loss)?)
    };
    grads.accumulate_into(model.store_mut())?;
    Ok(loss)
}

fn numeric(sample: &SampleRecord, e: Error) -> Error {
    match e {
        Error::NonFinite(m) | Error::Numeric(m) => {
            Error::Numeric(format!("non-finite loss or gradient on sample {}: {m}", sample.sample_id))
        }
        other => other,
    }
}

/// Trains `model` on the split's training part, selecting by validation macro-F1.
pub fn train_model<M: Classifier>(
    mut model: M,
    records: &[SampleRecord],
    split: &SplitPlan,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    let train = split.select(records, Part::Train)?;
    let val = split.select(records, Part::Val)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "fold {} needs nonempty train and validation parts",
            split.fold_id
        )));
    }
    let mut shuffle_rng = Rng::stream(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = Rng::stream(cfg.seed, Stream::Dropout);
    let mut domain_rng = Rng::stream(cfg.seed, Stream::DomainMask);
    let mut state = OptimizerState::new(model.store());
    model.store_mut().zero_grad();

    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0;
        for &i in &order {
            let sample = train[i];
            let mask = sample_domain_mask(sample.present(), &mut domain_rng, cfg.domain_dropout_p)?;
            let loss = accumulate_sample(&mut model, sample, mask, &mut dropout_rng).map_err(|e| numeric(sample, e))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss on sample {}", sample.sample_id)));
            }
            total += loss;
            if model.store().pending_grads() == cfg.accum_steps {
                adamw_step(model.store_mut(), &mut state, cfg)?;
                model.store_mut().zero_grad();
            }
        }
        if model.store().pending_grads() > 0 {
            adamw_step(model.store_mut(), &mut state, cfg)?;
            model.store_mut().zero_grad();
        }
        let (metrics, _) = evaluate(&model, &val)?;
        history.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_f1: metrics.macro_f1,
            val_acc: metrics.accuracy,
        });
        if metrics.macro_f1 > best_f1 {
            best_f1 = metrics.macro_f1;
            best_epoch = Some(epoch);
            best = model.clone();
        }
    }
    best.store_mut().zero_grad();
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
    })
}

/// Trains a freshly initialized two-stage model (initialization seeded by `train_cfg.seed`).
pub fn train(
    records: &[SampleRecord],
    split: &SplitPlan,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome<ModelParams>> {
    let init = ModelParams::init(model_cfg, train_cfg.seed)?;
    train_model(init, records, split, train_cfg)
}

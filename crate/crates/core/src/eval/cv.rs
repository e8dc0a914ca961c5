//! Five-fold cross-validation over grouped splits.

use std::fmt::Write as _;

use serde::Serialize;

use crate::data::{make_splits, Part, SampleRecord, SplitPlan};
use crate::error::{Error, Result};
use crate::eval::metrics::Metrics;
use crate::model::{AnyModel, ModelConfig, ModelKind};
use crate::train::{evaluate, train_model, EpochRecord, TrainConfig};

#[derive(Clone, Debug, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub best_epoch: Option<usize>,
    pub test_ids: Vec<String>,
    pub metrics: Metrics,
    #[serde(skip)]
    pub history: Vec<EpochRecord>,
    #[serde(skip)]
    pub model: Option<AnyModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvSummary {
    pub model: String,
    pub n_folds: usize,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub mean_macro_f1: f64,
    pub sd_macro_f1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CvReport {
    pub summary: CvSummary,
    pub folds: Vec<FoldResult>,
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Two-stage model on splits drawn from `train_cfg.seed`.
pub fn run_cv(records: &[SampleRecord], model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<CvReport> {
    let plans = make_splits(records, train_cfg.seed)?;
    run_cv_with(ModelKind::Unicorn, records, &plans, model_cfg, train_cfg, false)
}

/// Trains `kind` on every plan and evaluates its best checkpoint on that fold's test part.
/// With `keep_models` the selected checkpoints are returned in the fold results.
pub fn run_cv_with(
    kind: ModelKind,
    records: &[SampleRecord],
    plans: &[SplitPlan],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    keep_models: bool,
) -> Result<CvReport> {
    let mut folds = Vec::with_capacity(plans.len());
    for plan in plans {
        let fold = plan.fold_id;
        let run = || -> Result<FoldResult> {
            plan.validate(records)?;
            let init = AnyModel::init(kind, model_cfg, train_cfg.seed)?;
            let out = train_model(init, records, plan, train_cfg)?;
            let test = plan.select(records, Part::Test)?;
            let (metrics, _) = evaluate(&out.best, &test)?;
            Ok(FoldResult {
                fold,
                best_epoch: out.best_epoch,
                test_ids: plan.part(Part::Test).to_vec(),
                metrics,
                history: out.history,
                model: keep_models.then_some(out.best),
            })
        };
        folds.push(run().map_err(|e| Error::Fold {
            fold,
            source: Box::new(e),
        })?);
    }
    let acc: Vec<f64> = folds.iter().map(|f| f.metrics.accuracy).collect();
    let f1: Vec<f64> = folds.iter().map(|f| f.metrics.macro_f1).collect();
    let (mean_accuracy, sd_accuracy) = mean_sd(&acc);
    let (mean_macro_f1, sd_macro_f1) = mean_sd(&f1);
    Ok(CvReport {
        summary: CvSummary {
            model: kind.as_str().to_string(),
            n_folds: folds.len(),
            mean_accuracy,
            sd_accuracy,
            mean_macro_f1,
            sd_macro_f1,
        },
        folds,
    })
}

impl CvReport {
    /// One line per fold, then the mean ± sd line.
    pub fn render(&self) -> String {
        let mut s = String::from("fold\tbest_epoch\tn_test\taccuracy\tmacro_f1\n");
        for f in &self.folds {
            let epoch = f.best_epoch.map_or("-".to_string(), |e| e.to_string());
            let _ = writeln!(
                s,
                "{}\t{epoch}\t{}\t{:.6}\t{:.6}",
                f.fold, f.metrics.n_samples, f.metrics.accuracy, f.metrics.macro_f1
            );
        }
        let m = &self.summary;
        let _ = writeln!(
            s,
            "mean\t{}\t-\t{:.6}±{:.6}\t{:.6}±{:.6}",
            m.model, m.mean_accuracy, m.sd_accuracy, m.mean_macro_f1, m.sd_macro_f1
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

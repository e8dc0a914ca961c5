//! Inference-time modality ablations on one fixed checkpoint.
//!
//! Conditions: the full input, each single modality, and each leave-one-out
//! input. A leave-one-out row is scored on the test samples that contain the
//! left-out modality plus at least one other, and its deltas are taken against
//! the full input on exactly those samples.

use std::fmt::Write as _;

use serde::Serialize;

use crate::data::sample::{class_name, modality_name};
use crate::data::{ModalityMask, SampleRecord};
use crate::error::{Error, Result};
use crate::eval::metrics::Metrics;
use crate::model::{cls_to_mt_attention, forward, AnyModel, Classifier};
use crate::rng::Rng;
use crate::train::evaluate_masked;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionRow {
    pub modality: usize,
    /// `None` when no test sample qualifies ("no data").
    pub metrics: Option<Metrics>,
    /// Leave-one-out rows only: metric minus the full-input metric on the same samples.
    pub delta_f1: Option<f64>,
    pub delta_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassAttention {
    pub class: usize,
    pub n_samples: usize,
    /// Mean CLS to modality-token attention, over samples of this true class that have the modality.
    pub mean: Vec<Option<f64>>,
    /// Fraction of this class's samples whose largest CLS attention falls on each modality.
    pub argmax_fraction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub full: Metrics,
    pub single: Vec<ConditionRow>,
    pub leave_one_out: Vec<ConditionRow>,
    /// Empty for models without modality tokens.
    pub attention: Vec<ClassAttention>,
}

pub fn ablate(model: &AnyModel, test: &[&SampleRecord]) -> Result<AblationReport> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("ablation on an empty test set".into()));
    }
    let n_mod = model.config().n_modalities;
    let n_classes = model.config().n_classes;
    let (full, _) = evaluate_masked(model, test, |r| Some(r.present()))?;

    let optional = |metrics: Result<(Metrics, Vec<usize>)>| -> Result<Option<Metrics>> {
        match metrics {
            Ok((m, _)) => Ok(Some(m)),
            Err(Error::InvalidArgument(msg)) if msg.contains("empty prediction set") => Ok(None),
            Err(e) => Err(e),
        }
    };

    let mut single = Vec::with_capacity(n_mod);
    let mut leave_one_out = Vec::with_capacity(n_mod);
    for m in 0..n_mod {
        let only = ModalityMask::single(m);
        let metrics = optional(evaluate_masked(model, test, |r| r.present().contains(m).then_some(only)))?;
        single.push(ConditionRow {
            modality: m,
            metrics,
            delta_f1: None,
            delta_accuracy: None,
        });

        let qualifies = |r: &SampleRecord| r.present().contains(m) && r.present().len() > 1;
        let loo = optional(evaluate_masked(model, test, |r| qualifies(r).then(|| r.present().without(m))))?;
        let reference = optional(evaluate_masked(model, test, |r| qualifies(r).then(|| r.present())))?;
        let (delta_f1, delta_accuracy) = match (&loo, &reference) {
            (Some(a), Some(b)) => (Some(a.macro_f1 - b.macro_f1), Some(a.accuracy - b.accuracy)),
            _ => (None, None),
        };
        leave_one_out.push(ConditionRow {
            modality: m,
            metrics: loo,
            delta_f1,
            delta_accuracy,
        });
    }

    let attention = match model.as_unicorn() {
        None => Vec::new(),
        Some(params) => {
            let mut sums = vec![vec![0.0; n_mod]; n_classes];
            let mut counts = vec![vec![0usize; n_mod]; n_classes];
            let mut argmax = vec![vec![0usize; n_mod]; n_classes];
            let mut n = vec![0usize; n_classes];
            for r in test {
                let trace = forward(r, r.present(), params, &mut Rng::new(0), false)?;
                let att = cls_to_mt_attention(&trace, n_mod);
                n[r.label] += 1;
                let mut best: Option<(usize, f64)> = None;
                for (m, a) in att.iter().enumerate() {
                    if let Some(a) = a {
                        sums[r.label][m] += a;
                        counts[r.label][m] += 1;
                        if best.map_or(true, |(_, b)| *a > b) {
                            best = Some((m, *a));
                        }
                    }
                }
                if let Some((m, _)) = best {
                    argmax[r.label][m] += 1;
                }
            }
            (0..n_classes)
                .map(|c| ClassAttention {
                    class: c,
                    n_samples: n[c],
                    mean: (0..n_mod)
                        .map(|m| (counts[c][m] > 0).then(|| sums[c][m] / counts[c][m] as f64))
                        .collect(),
                    argmax_fraction: (0..n_mod)
                        .map(|m| if n[c] == 0 { 0.0 } else { argmax[c][m] as f64 / n[c] as f64 })
                        .collect(),
                })
                .collect()
        }
    };

    Ok(AblationReport {
        full,
        single,
        leave_one_out,
        attention,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or("no data".to_string(), |x| format!("{x:.6}"))
}

impl AblationReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "full\tn={}\taccuracy={:.6}\tmacro_f1={:.6}",
            self.full.n_samples, self.full.accuracy, self.full.macro_f1
        );
        let _ = writeln!(s, "single\tmodality\tn\taccuracy\tmacro_f1");
        for r in &self.single {
            let m = r.metrics.as_ref();
            let _ = writeln!(
                s,
                "single\t{}\t{}\t{}\t{}",
                modality_name(r.modality),
                m.map_or(0, |m| m.n_samples),
                cell(m.map(|m| m.accuracy)),
                cell(m.map(|m| m.macro_f1))
            );
        }
        let _ = writeln!(s, "leave_out\tmodality\tn\tmacro_f1\tdelta_f1\tdelta_accuracy");
        for r in &self.leave_one_out {
            let m = r.metrics.as_ref();
            let _ = writeln!(
                s,
                "leave_out\t{}\t{}\t{}\t{}\t{}",
                modality_name(r.modality),
                m.map_or(0, |m| m.n_samples),
                cell(m.map(|m| m.macro_f1)),
                cell(r.delta_f1),
                cell(r.delta_accuracy)
            );
        }
        if !self.attention.is_empty() {
            let n_mod = self.single.len();
            let names: Vec<String> = (0..n_mod).map(modality_name).collect();
            let _ = writeln!(s, "attention\tclass\tn\t{}", names.join("\t"));
            for a in &self.attention {
                let cells: Vec<String> = a.mean.iter().map(|v| cell(*v)).collect();
                let _ = writeln!(s, "attention\t{}\t{}\t{}", class_name(a.class), a.n_samples, cells.join("\t"));
            }
            let _ = writeln!(s, "attention_argmax\tclass\tn\t{}", names.join("\t"));
            for a in &self.attention {
                let cells: Vec<String> = a.argmax_fraction.iter().map(|v| format!("{v:.4}")).collect();
                let _ = writeln!(
                    s,
                    "attention_argmax\t{}\t{}\t{}",
                    class_name(a.class),
                    a.n_samples,
                    cells.join("\t")
                );
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

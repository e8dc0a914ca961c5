use std::fmt::Write as _;

use serde::Serialize;

use crate::data::sample::class_name;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub n_samples: usize,
    pub accuracy: f64,
    /// Mean F1 over classes that occur in the truths or the predictions.
    pub macro_f1: f64,
    /// Per-class F1; classes absent from both truths and predictions hold 0.
    pub per_class_f1: Vec<f64>,
    /// False for classes absent from both truths and predictions.
    pub class_present: Vec<bool>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    /// `confusion` with each nonempty row divided by its sum.
    pub confusion_normalized: Vec<Vec<f64>>,
}

pub fn compute_metrics(truths: &[usize], preds: &[usize], n_classes: usize) -> Result<Metrics> {
    if truths.is_empty() {
        return Err(Error::InvalidArgument("metrics of an empty prediction set".into()));
    }
    if truths.len() != preds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} truths but {} predictions",
            truths.len(),
            preds.len()
        )));
    }
    if let Some(bad) = truths.iter().chain(preds).find(|c| **c >= n_classes) {
        return Err(Error::InvalidArgument(format!("class {bad} outside 0..{n_classes}")));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (t, p) in truths.iter().zip(preds) {
        confusion[*t][*p] += 1;
    }
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let mut per_class_f1 = vec![0.0; n_classes];
    let mut class_present = vec![false; n_classes];
    for c in 0..n_classes {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        if support + predicted == 0 {
            continue;
        }
        class_present[c] = true;
        per_class_f1[c] = 2.0 * tp as f64 / (support + predicted) as f64;
    }
    let present = class_present.iter().filter(|p| **p).count();
    let macro_f1 = per_class_f1
        .iter()
        .zip(&class_present)
        .filter(|(_, p)| **p)
        .map(|(f, _)| f)
        .sum::<f64>()
        / present as f64;
    let confusion_normalized = confusion
        .iter()
        .map(|row| {
            let s: usize = row.iter().sum();
            row.iter()
                .map(|v| if s == 0 { 0.0 } else { *v as f64 / s as f64 })
                .collect()
        })
        .collect();
    Ok(Metrics {
        n_samples: truths.len(),
        accuracy: correct as f64 / truths.len() as f64,
        macro_f1,
        per_class_f1,
        class_present,
        confusion,
        confusion_normalized,
    })
}

impl Metrics {
    /// Tab-separated summary plus the raw and row-normalized confusion matrices.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_samples\t{}", self.n_samples);
        let _ = writeln!(s, "accuracy\t{:.6}", self.accuracy);
        let _ = writeln!(s, "macro_f1\t{:.6}", self.macro_f1);
        for (c, f) in self.per_class_f1.iter().enumerate() {
            let flag = if self.class_present[c] { "" } else { "\tabsent" };
            let _ = writeln!(s, "f1.{}\t{f:.6}{flag}", class_name(c));
        }
        let names: Vec<String> = (0..self.confusion.len()).map(class_name).collect();
        let _ = writeln!(s, "confusion\t{}", names.join("\t"));
        for (c, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}\t{}", class_name(c), cells.join("\t"));
        }
        let _ = writeln!(s, "confusion_normalized\t{}", names.join("\t"));
        for (c, row) in self.confusion_normalized.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(s, "{}\t{}", class_name(c), cells.join("\t"));
        }
        s
    }
}

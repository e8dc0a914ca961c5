//! Penultimate feature export for external embedding tools.
//!
//! One tab-separated line per (sample, mask):
//! `sample_id  individual_id  label  mask  f_1 ... f_d`, where `mask` is the
//! `+`-joined modality names of the pass.

use std::fmt::Write as _;

use crate::data::sample::modality_name;
use crate::data::{ModalityMask, SampleRecord};
use crate::error::Result;
use crate::model::{infer, Classifier};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub sample_id: String,
    pub individual_id: String,
    pub label: usize,
    pub mask: ModalityMask,
    pub predicted: usize,
    pub features: Vec<f64>,
}

/// Full-input features for every record, followed by one single-modality row
/// per entry of `variants` that the record contains.
pub fn export_features<M: Classifier>(model: &M, records: &[SampleRecord], variants: &[usize]) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::with_capacity(records.len() * (1 + variants.len()));
    for r in records {
        let masks = std::iter::once(r.present()).chain(
            variants
                .iter()
                .filter(|m| r.present().contains(**m))
                .map(|m| ModalityMask::single(*m)),
        );
        for mask in masks {
            let p = infer(model, r, mask)?;
            rows.push(FeatureRow {
                sample_id: r.sample_id.clone(),
                individual_id: r.individual_id.clone(),
                label: r.label,
                mask,
                predicted: p.class,
                features: p.features,
            });
        }
    }
    Ok(rows)
}

fn mask_label(mask: ModalityMask) -> String {
    mask.iter().map(modality_name).collect::<Vec<_>>().join("+")
}

pub fn render_features(rows: &[FeatureRow]) -> String {
    let mut s = String::new();
    for row in rows {
        let _ = write!(s, "{}\t{}\t{}\t{}", row.sample_id, row.individual_id, row.label, mask_label(row.mask));
        for v in &row.features {
            let _ = write!(s, "\t{v:e}");
        }
        s.push('\n');
    }
    s
}

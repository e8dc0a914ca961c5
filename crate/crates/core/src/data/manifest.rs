//! Line-delimited dataset manifests.
//!
//! One sample per line, comma separated:
//!
//! ```text
//! sample_id,individual_id,segment_id,label,<bag for modality 0>,<bag for modality 1>,...
//! ```
//!
//! Labels are class names (`AIT`, `PIT`, `EFA`, `LFA`, `CFA`). Bag paths are
//! relative to the manifest's directory; an empty field means the bag is
//! absent. Blank lines and lines starting with `#` are ignored.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::codec::write_atomic;
use crate::data::bag::read_bag;
use crate::data::sample::{class_name, parse_label, SampleRecord};
use crate::error::{Error, Result};

/// A manifest line with bag paths resolved but not yet loaded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub individual_id: String,
    pub segment_id: String,
    pub label: usize,
    /// Indexed by modality id.
    pub bag_paths: Vec<Option<PathBuf>>,
}

impl ManifestEntry {
    pub fn n_bags(&self) -> usize {
        self.bag_paths.iter().flatten().count()
    }
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 5 {
            return Err(Error::Data(format!(
                "manifest line {}: expected at least 5 fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let label = parse_label(fields[3]).ok_or_else(|| {
            Error::Data(format!("manifest line {}: unknown label {:?}", lineno + 1, fields[3]))
        })?;
        let sample_id = fields[0].to_string();
        if sample_id.is_empty() {
            return Err(Error::Data(format!("manifest line {}: empty sample id", lineno + 1)));
        }
        if !seen.insert(sample_id.clone()) {
            return Err(Error::Data(format!("duplicate sample id {sample_id:?}")));
        }
        let bag_paths: Vec<Option<PathBuf>> = fields[4..]
            .iter()
            .map(|f| (!f.is_empty()).then(|| base.join(f)))
            .collect();
        if bag_paths.iter().all(Option::is_none) {
            return Err(Error::Data(format!("sample {sample_id:?} lists no bags")));
        }
        out.push(ManifestEntry {
            sample_id,
            individual_id: fields[1].to_string(),
            segment_id: fields[2].to_string(),
            label,
            bag_paths,
        });
    }
    Ok(out)
}

/// Reads and validates a manifest file.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&text, base)?;
    for e in &entries {
        for p in e.bag_paths.iter().flatten() {
            if !p.is_file() {
                return Err(Error::Data(format!(
                    "sample {:?}: missing bag file {}",
                    e.sample_id,
                    p.display()
                )));
            }
        }
    }
    Ok(entries)
}

/// Loads every bag referenced by `entries`, checking modality ids and feature width.
pub fn load_samples(entries: &[ManifestEntry], feat_dim: Option<usize>) -> Result<Vec<SampleRecord>> {
    let mut width = feat_dim;
    entries
        .iter()
        .map(|e| {
            let mut bags = Vec::new();
            for (m, p) in e.bag_paths.iter().enumerate() {
                let Some(p) = p else { continue };
                let bag = read_bag(p)?;
                if bag.modality != m {
                    return Err(Error::Data(format!(
                        "{} declares modality {} but is listed in column {m}",
                        p.display(),
                        bag.modality
                    )));
                }
                match width {
                    Some(w) if w != bag.feat_dim() => {
                        return Err(Error::ConfigMismatch(format!(
                            "{} has feature width {}, expected feat_dim {w}",
                            p.display(),
                            bag.feat_dim()
                        )))
                    }
                    _ => width = Some(bag.feat_dim()),
                }
                bags.push(bag);
            }
            SampleRecord::new(&e.sample_id, &e.individual_id, &e.segment_id, e.label, bags)
        })
        .collect()
}

/// Convenience: [`load_manifest`] followed by [`load_samples`].
pub fn load_dataset(path: &Path, feat_dim: Option<usize>) -> Result<Vec<SampleRecord>> {
    load_samples(&load_manifest(path)?, feat_dim)
}

/// Renders entries back to manifest text, with paths made relative to `base` when possible.
pub fn render_manifest(entries: &[ManifestEntry], base: &Path) -> String {
    let mut s = String::from("# sample_id,individual_id,segment_id,label,bags...\n");
    for e in entries {
        let _ = write!(
            s,
            "{},{},{},{}",
            e.sample_id,
            e.individual_id,
            e.segment_id,
            class_name(e.label)
        );
        for p in &e.bag_paths {
            s.push(',');
            if let Some(p) = p {
                let rel = p.strip_prefix(base).unwrap_or(p);
                s.push_str(&rel.to_string_lossy());
            }
        }
        s.push('\n');
    }
    s
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    write_atomic(path, render_manifest(entries, base).as_bytes())
}

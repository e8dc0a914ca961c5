//! Synthetic multi-stain feature bags with planted class signal.
//!
//! Each patch is isotropic Gaussian noise. For a sample whose class carries
//! signal in modality `m`, a random subset of `ceil(signal_fraction * N)`
//! patches of the `m` bag additionally receives `strength * u`, where `u` is a
//! fixed unit direction drawn once per (class, modality).
//!
//! Two tasks are available:
//!
//! * `planted`: class `c` is drawn from `class_weights`; its signal goes into
//!   the modalities listed under `signal.<CLASS>`.
//! * `xor`: two modalities independently carry a shared direction with
//!   probability 1/2 each; the label is 1 when exactly one of them does.
//!   A model pooling all patches into one bag cannot tell "one" from "both".

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::bag::{write_bag, FeatureBag};
use crate::data::manifest::{write_manifest, ManifestEntry};
use crate::data::sample::{class_name, modality_name, parse_label, parse_modality, SampleRecord};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Planted,
    Xor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub task: Task,
    pub n_individuals: usize,
    pub segments_per_individual: usize,
    pub n_modalities: usize,
    pub n_classes: usize,
    pub feat_dim: usize,
    pub patches_min: usize,
    pub patches_max: usize,
    pub strength: f64,
    pub noise_sigma: f64,
    pub signal_fraction: f64,
    pub missing_bag_prob: f64,
    pub class_weights: Vec<f64>,
    /// Modalities carrying each class's signal (planted task).
    pub signal: Vec<Vec<usize>>,
    /// The two interacting modalities (xor task).
    pub xor_modalities: (usize, usize),
    /// Independent probability that each interacting modality carries the signal (xor task).
    pub xor_presence: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// The reference planted task: AIT in H&E, PIT in EvG, EFA in both, the
    /// two advanced classes only in von Kossa, and Movat uninformative.
    fn default() -> Self {
        Self {
            task: Task::Planted,
            n_individuals: 100,
            segments_per_individual: 4,
            n_modalities: 4,
            n_classes: 5,
            feat_dim: 64,
            patches_min: 16,
            patches_max: 32,
            strength: 2.0,
            noise_sigma: 1.0,
            signal_fraction: 0.5,
            missing_bag_prob: 0.0,
            class_weights: vec![1.0; 5],
            signal: vec![vec![0], vec![1], vec![0, 1], vec![2], vec![2]],
            xor_modalities: (0, 1),
            xor_presence: 0.5,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// The cross-modality interaction task: label 1 when exactly one of the two
    /// interacting modalities carries the signal. Features are 16-dimensional.
    pub fn xor() -> Self {
        Self {
            task: Task::Xor,
            n_classes: 2,
            feat_dim: 16,
            class_weights: vec![1.0; 2],
            signal: Vec::new(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("degenerate synthetic spec: {m}")));
        if self.n_individuals == 0 || self.segments_per_individual == 0 {
            return bad("no samples".into());
        }
        if self.n_modalities == 0 || self.n_modalities > 64 || self.feat_dim == 0 {
            return bad("n_modalities must be 1..=64 and feat_dim positive".into());
        }
        if self.n_classes < 2 {
            return bad("need at least two classes".into());
        }
        if self.patches_min == 0 || self.patches_min > self.patches_max {
            return bad(format!("patch range {}..={}", self.patches_min, self.patches_max));
        }
        if !(self.strength.is_finite() && self.strength >= 0.0) {
            return bad(format!("strength {}", self.strength));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma {}", self.noise_sigma));
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction <= 1.0) {
            return bad(format!("signal_fraction {}", self.signal_fraction));
        }
        if !(0.0..1.0).contains(&self.missing_bag_prob) {
            return bad(format!("missing_bag_prob {}", self.missing_bag_prob));
        }
        match self.task {
            Task::Planted => {
                if self.class_weights.len() != self.n_classes
                    || self.class_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                    || self.class_weights.iter().sum::<f64>() <= 0.0
                {
                    return bad(format!("class_weights {:?}", self.class_weights));
                }
                if self.signal.len() != self.n_classes {
                    return bad(format!("signal assignment for {} of {} classes", self.signal.len(), self.n_classes));
                }
                for (c, mods) in self.signal.iter().enumerate() {
                    if mods.is_empty() {
                        return bad(format!("class {} carries no signal", class_name(c)));
                    }
                    if let Some(m) = mods.iter().find(|m| **m >= self.n_modalities) {
                        return bad(format!("class {} assigned to unknown modality {m}", class_name(c)));
                    }
                }
            }
            Task::Xor => {
                let (a, b) = self.xor_modalities;
                if a == b || a >= self.n_modalities || b >= self.n_modalities {
                    return bad(format!("xor_modalities ({a}, {b})"));
                }
                if !(self.xor_presence > 0.0 && self.xor_presence < 1.0) {
                    return bad(format!("xor_presence {}", self.xor_presence));
                }
                if self.n_classes != 2 {
                    return bad(format!("the xor task has 2 classes, got {}", self.n_classes));
                }
            }
        }
        Ok(())
    }

    /// Parses a `key = value` spec file; unspecified keys keep the reference defaults.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut s = match kv.get("task") {
            None | Some("planted") => Self::default(),
            Some("xor") => Self::xor(),
            Some(other) => return Err(Error::Config(format!("unknown task {other:?}"))),
        };
        kv.reject_unknown(|k| {
            matches!(
                k,
                "task"
                    | "n_individuals"
                    | "segments_per_individual"
                    | "n_modalities"
                    | "n_classes"
                    | "feat_dim"
                    | "patches_min"
                    | "patches_max"
                    | "strength"
                    | "noise_sigma"
                    | "signal_fraction"
                    | "missing_bag_prob"
                    | "class_weights"
                    | "xor_modalities"
                    | "xor_presence"
                    | "seed"
            ) || k.starts_with("signal.")
        })?;
        kv.read_into("n_individuals", &mut s.n_individuals)?;
        kv.read_into("segments_per_individual", &mut s.segments_per_individual)?;
        kv.read_into("n_modalities", &mut s.n_modalities)?;
        kv.read_into("n_classes", &mut s.n_classes)?;
        kv.read_into("feat_dim", &mut s.feat_dim)?;
        kv.read_into("patches_min", &mut s.patches_min)?;
        kv.read_into("patches_max", &mut s.patches_max)?;
        kv.read_into("strength", &mut s.strength)?;
        kv.read_into("noise_sigma", &mut s.noise_sigma)?;
        kv.read_into("signal_fraction", &mut s.signal_fraction)?;
        kv.read_into("missing_bag_prob", &mut s.missing_bag_prob)?;
        kv.read_into("xor_presence", &mut s.xor_presence)?;
        kv.read_into("seed", &mut s.seed)?;
        if let Some(v) = kv.get("class_weights") {
            s.class_weights = v
                .split(',')
                .map(|w| w.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("invalid class_weights {v:?}")))?;
        } else if s.class_weights.len() != s.n_classes {
            s.class_weights = vec![1.0; s.n_classes];
        }
        if s.signal.len() != s.n_classes {
            s.signal.resize(s.n_classes, Vec::new());
        }
        for key in kv.keys().filter(|k| k.starts_with("signal.")) {
            let cname = &key["signal.".len()..];
            let c = parse_label(cname)
                .or_else(|| cname.parse().ok())
                .filter(|c| *c < s.n_classes)
                .ok_or_else(|| Error::Config(format!("unknown class in {key:?}")))?;
            s.signal[c] = parse_modalities(kv.get(key).unwrap_or(""))?;
        }
        if let Some(v) = kv.get("xor_modalities") {
            let m = parse_modalities(v)?;
            if m.len() != 2 {
                return Err(Error::Config("xor_modalities needs exactly two modalities".into()));
            }
            s.xor_modalities = (m[0], m[1]);
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_key_values(&KeyValues::parse(&text)?)
    }

    /// Renders the spec in the same `key = value` format [`load`](Self::load) reads.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let task = match self.task {
            Task::Planted => "planted",
            Task::Xor => "xor",
        };
        let _ = writeln!(s, "task = {task}");
        let _ = writeln!(s, "n_individuals = {}", self.n_individuals);
        let _ = writeln!(s, "segments_per_individual = {}", self.segments_per_individual);
        let _ = writeln!(s, "n_modalities = {}", self.n_modalities);
        let _ = writeln!(s, "n_classes = {}", self.n_classes);
        let _ = writeln!(s, "feat_dim = {}", self.feat_dim);
        let _ = writeln!(s, "patches_min = {}", self.patches_min);
        let _ = writeln!(s, "patches_max = {}", self.patches_max);
        let _ = writeln!(s, "strength = {}", self.strength);
        let _ = writeln!(s, "noise_sigma = {}", self.noise_sigma);
        let _ = writeln!(s, "signal_fraction = {}", self.signal_fraction);
        let _ = writeln!(s, "missing_bag_prob = {}", self.missing_bag_prob);
        let w: Vec<String> = self.class_weights.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "class_weights = {}", w.join(","));
        for (c, mods) in self.signal.iter().enumerate() {
            let names: Vec<String> = mods.iter().map(|m| modality_name(*m)).collect();
            let _ = writeln!(s, "signal.{} = {}", class_name(c), names.join(","));
        }
        let (a, b) = self.xor_modalities;
        let _ = writeln!(s, "xor_modalities = {},{}", modality_name(a), modality_name(b));
        let _ = writeln!(s, "xor_presence = {}", self.xor_presence);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

fn parse_modalities(v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_modality(s).ok_or_else(|| Error::Config(format!("unknown modality {s:?}"))))
        .collect()
}

/// Generated samples plus the ground truth needed to score explanations.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub records: Vec<SampleRecord>,
    /// Indices of signal-carrying patches per (sample id, modality).
    pub signal_patches: BTreeMap<(String, usize), Vec<usize>>,
    /// Unit signal directions per (class, modality).
    pub directions: BTreeMap<(usize, usize), Vec<f64>>,
}

impl SyntheticDataset {
    /// Modalities that carry signal for `class`.
    pub fn informative_modalities(&self, class: usize) -> Vec<usize> {
        match self.spec.task {
            Task::Planted => self.spec.signal.get(class).cloned().unwrap_or_default(),
            Task::Xor => vec![self.spec.xor_modalities.0, self.spec.xor_modalities.1],
        }
    }
}

fn unit_vector(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Rounds through `f32` so the in-memory bag equals what the bag file stores.
fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = Rng::stream(spec.seed, Stream::Data);
    let mut directions = BTreeMap::new();
    match spec.task {
        Task::Planted => {
            for (c, mods) in spec.signal.iter().enumerate() {
                for &m in mods {
                    directions.insert((c, m), unit_vector(spec.feat_dim, &mut rng));
                }
            }
        }
        Task::Xor => {
            let u = unit_vector(spec.feat_dim, &mut rng);
            let (a, b) = spec.xor_modalities;
            directions.insert((1, a), u.clone());
            directions.insert((1, b), u);
        }
    }
    let mut records = Vec::new();
    let mut signal_patches = BTreeMap::new();
    for i in 0..spec.n_individuals {
        let individual = format!("ind{i:03}");
        for s in 0..spec.segments_per_individual {
            let sample_id = format!("{individual}_seg{s}");
            // Which modality carries which direction for this sample.
            let (label, carriers): (usize, Vec<(usize, &Vec<f64>)>) = match spec.task {
                Task::Planted => {
                    let c = rng.weighted_index(&spec.class_weights);
                    let carriers = spec.signal[c].iter().map(|m| (*m, &directions[&(c, *m)])).collect();
                    (c, carriers)
                }
                Task::Xor => {
                    let (a, b) = spec.xor_modalities;
                    let (pa, pb) = (rng.bernoulli(spec.xor_presence), rng.bernoulli(spec.xor_presence));
                    let u = &directions[&(1, a)];
                    let mut carriers = Vec::new();
                    if pa {
                        carriers.push((a, u));
                    }
                    if pb {
                        carriers.push((b, u));
                    }
                    (usize::from(pa != pb), carriers)
                }
            };
            let mut present: Vec<bool> = (0..spec.n_modalities)
                .map(|_| !rng.bernoulli(spec.missing_bag_prob))
                .collect();
            if !present.iter().any(|p| *p) {
                present[rng.below(spec.n_modalities)] = true;
            }
            let mut bags = Vec::new();
            for (m, keep) in present.iter().enumerate() {
                let n = rng.range_inclusive(spec.patches_min, spec.patches_max);
                let mut data: Vec<f64> = (0..n * spec.feat_dim)
                    .map(|_| rng.normal() * spec.noise_sigma)
                    .collect();
                if let Some((_, u)) = carriers.iter().find(|(cm, _)| *cm == m) {
                    let k = ((spec.signal_fraction * n as f64).ceil() as usize).clamp(1, n);
                    let mut idx: Vec<usize> = (0..n).collect();
                    rng.shuffle(&mut idx);
                    let mut chosen = idx[..k].to_vec();
                    chosen.sort_unstable();
                    for &p in &chosen {
                        for (j, uj) in u.iter().enumerate() {
                            data[p * spec.feat_dim + j] += spec.strength * uj;
                        }
                    }
                    if *keep {
                        signal_patches.insert((sample_id.clone(), m), chosen);
                    }
                }
                if !*keep {
                    continue;
                }
                data.iter_mut().for_each(|v| *v = quantize(*v));
                let t = Tensor::new(&[n, spec.feat_dim], data)?;
                bags.push(FeatureBag::new(m, format!("{sample_id}_{}", modality_name(m)), t)?);
            }
            records.push(SampleRecord::new(&sample_id, &individual, format!("seg{s}"), label, bags)?);
        }
    }
    Ok(SyntheticDataset {
        spec: spec.clone(),
        records,
        signal_patches,
        directions,
    })
}

/// Writes bags under `out/bags/` and a `manifest.csv`; returns the manifest path.
pub fn write_synthetic(ds: &SyntheticDataset, out: &Path) -> Result<PathBuf> {
    let bag_dir = out.join("bags");
    std::fs::create_dir_all(&bag_dir).map_err(|e| Error::io(&bag_dir, e))?;
    let mut entries = Vec::with_capacity(ds.records.len());
    for r in &ds.records {
        let mut paths = vec![None; ds.spec.n_modalities];
        for (m, bag) in &r.bags {
            let p = bag_dir.join(format!("{}.unibag", bag.slide_id));
            write_bag(&p, bag)?;
            paths[*m] = Some(p);
        }
        entries.push(ManifestEntry {
            sample_id: r.sample_id.clone(),
            individual_id: r.individual_id.clone(),
            segment_id: r.segment_id.clone(),
            label: r.label,
            bag_paths: paths,
        });
    }
    let manifest = out.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    crate::codec::write_atomic(&out.join("synth_spec.txt"), ds.spec.render().as_bytes())?;
    Ok(manifest)
}

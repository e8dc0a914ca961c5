//! Attention rollout, per-patch class scores and slide-level score maps.
//!
//! Rollout over `L` blocks with head-mean attention `A_l`:
//!
//! ```text
//! B_l = rownorm(0.5 (A_l + I))
//! R   = B_L ... B_1
//! ```
//!
//! The two-stage patch weight of patch `j` in modality `m` is
//! `R_expert[m][0, 1 + j] * R_agg[0, 1 + pos(m)]`: the MT row of the expert
//! rollout scaled by how much the CLS token draws from that MT.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::block::AttentionRecord;
use crate::codec::{read_file, write_atomic};
use crate::data::sample::{class_name, modality_name};
use crate::data::{read_bag, FeatureBag, ModalityMask, SampleRecord};
use crate::error::{Error, Result};
use crate::model::{argmax, forward, Classifier, ForwardTrace, ModelParams};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Composes the residual-adjusted, head-averaged attention of consecutive blocks.
pub fn rollout(records: &[AttentionRecord]) -> Result<Tensor> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("rollout over zero blocks".into()))?;
    let t = first.tokens();
    let mut acc = identity(t);
    for (l, rec) in records.iter().enumerate() {
        if rec.tokens() != t {
            return Err(Error::Shape(format!(
                "block {l} attends over {} tokens, block 0 over {t}",
                rec.tokens()
            )));
        }
        let a = rec.head_mean();
        let mut b = vec![0.0; t * t];
        for i in 0..t {
            let row = &mut b[i * t..(i + 1) * t];
            for (j, v) in row.iter_mut().enumerate() {
                *v = 0.5 * (a.at(i, j) + if i == j { 1.0 } else { 0.0 });
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        acc = matmul(&b, &acc, t);
    }
    Tensor::new(&[t, t], acc)
}

fn identity(t: usize) -> Vec<f64> {
    let mut m = vec![0.0; t * t];
    for i in 0..t {
        m[i * t + i] = 1.0;
    }
    m
}

fn matmul(a: &[f64], b: &[f64], t: usize) -> Vec<f64> {
    let mut out = vec![0.0; t * t];
    for i in 0..t {
        for k in 0..t {
            let aik = a[i * t + k];
            for j in 0..t {
                out[i * t + j] += aik * b[k * t + j];
            }
        }
    }
    out
}

/// Expert-stage rollout only: the MT row restricted to patch columns, per modality.
pub fn expert_patch_attention(trace: &ForwardTrace) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (&m, records) in &trace.attention.expert {
        let r = rollout(records)?;
        out.insert(m, r.row(0)[1..].to_vec());
    }
    Ok(out)
}

/// Two-stage patch weights per modality of the pass.
pub fn patch_attention(trace: &ForwardTrace) -> Result<BTreeMap<usize, Vec<f64>>> {
    let agg = rollout(&trace.attention.aggregator)?;
    let mut out = expert_patch_attention(trace)?;
    for (pos, m) in trace.modalities().iter().enumerate() {
        let cls_to_mt = agg.at(0, pos + 1);
        if let Some(w) = out.get_mut(m) {
            w.iter_mut().for_each(|v| *v *= cls_to_mt);
        }
    }
    Ok(out)
}

/// Class probabilities from forwarding one patch alone as a single-modality sample.
pub fn patch_class_scores(patch: &FeatureBag, params: &ModelParams) -> Result<Vec<f64>> {
    if patch.n_patches() != 1 {
        return Err(Error::InvalidArgument(format!(
            "class scores need exactly one patch, got {}",
            patch.n_patches()
        )));
    }
    let sample = SampleRecord::new(patch.slide_id.clone(), "", "", 0, vec![patch.clone()])?;
    let trace = forward(&sample, ModalityMask::single(patch.modality), params, &mut Rng::new(0), false)?;
    Ok(trace.probs)
}

/// `attention[i] * scores[i][predicted]`.
pub fn class_attention(attention: &[f64], scores: &[Vec<f64>], predicted: usize) -> Result<Vec<f64>> {
    if attention.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} attention weights but {} score vectors",
            attention.len(),
            scores.len()
        )));
    }
    attention
        .iter()
        .zip(scores)
        .map(|(a, s)| {
            s.get(predicted)
                .map(|p| a * p)
                .ok_or_else(|| Error::InvalidArgument(format!("class {predicted} outside score vector")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchScore {
    pub modality: usize,
    pub patch: usize,
    pub coord: Option<(i64, i64)>,
    pub rollout: f64,
    pub class_probs: Vec<f64>,
    pub class_attention: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Rollout,
    ClassAttention,
    ClassProb(usize),
}

impl Channel {
    pub fn name(self) -> String {
        match self {
            Channel::Rollout => "rollout".into(),
            Channel::ClassAttention => "class_attention".into(),
            Channel::ClassProb(c) => format!("prob_{}", class_name(c)),
        }
    }

    fn get(self, p: &PatchScore) -> f64 {
        match self {
            Channel::Rollout => p.rollout,
            Channel::ClassAttention => p.class_attention,
            Channel::ClassProb(c) => p.class_probs[c],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchScoreMap {
    pub sample_id: String,
    pub predicted: usize,
    pub n_classes: usize,
    pub entries: Vec<PatchScore>,
    pub normalized: bool,
}

impl PatchScoreMap {
    /// Min-max scales `rollout` and `class_attention` to [0, 1] per modality; constant channels become 0.
    pub fn normalize(&mut self) {
        let mods: BTreeSet<usize> = self.entries.iter().map(|e| e.modality).collect();
        for m in mods {
            for get in [
                (|p: &mut PatchScore| &mut p.rollout) as fn(&mut PatchScore) -> &mut f64,
                |p: &mut PatchScore| &mut p.class_attention,
            ] {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for e in self.entries.iter_mut().filter(|e| e.modality == m) {
                    let v = *get(e);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                for e in self.entries.iter_mut().filter(|e| e.modality == m) {
                    let v = get(e);
                    *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
                }
            }
        }
        self.normalized = true;
    }

    /// Tab-separated records: `modality patch x y rollout class_attention prob_*`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# sample={} predicted={} normalized={}",
            self.sample_id,
            class_name(self.predicted),
            self.normalized
        );
        let probs: Vec<String> = (0..self.n_classes).map(|c| Channel::ClassProb(c).name()).collect();
        let _ = writeln!(s, "modality\tpatch\tx\ty\trollout\tclass_attention\t{}", probs.join("\t"));
        for e in &self.entries {
            let (x, y) = e
                .coord
                .map_or(("-".to_string(), "-".to_string()), |(x, y)| (x.to_string(), y.to_string()));
            let _ = write!(
                s,
                "{}\t{}\t{x}\t{y}\t{:e}\t{:e}",
                modality_name(e.modality),
                e.patch,
                e.rollout,
                e.class_attention
            );
            for p in &e.class_probs {
                let _ = write!(s, "\t{p:e}");
            }
            s.push('\n');
        }
        s
    }

    /// Binary graymap of one channel over the coordinate bounding box of `modality`;
    /// `None` when the patches carry no coordinates.
    pub fn render_pgm(&self, modality: usize, channel: Channel) -> Option<Vec<u8>> {
        let pts: Vec<((i64, i64), f64)> = self
            .entries
            .iter()
            .filter(|e| e.modality == modality)
            .map(|e| e.coord.map(|c| (c, channel.get(e))))
            .collect::<Option<_>>()?;
        let x0 = pts.iter().map(|p| p.0 .0).min()?;
        let x1 = pts.iter().map(|p| p.0 .0).max()?;
        let y0 = pts.iter().map(|p| p.0 .1).min()?;
        let y1 = pts.iter().map(|p| p.0 .1).max()?;
        let (w, h) = ((x1 - x0 + 1) as usize, (y1 - y0 + 1) as usize);
        let mut pixels = vec![0u8; w * h];
        for ((x, y), v) in pts {
            let idx = (y - y0) as usize * w + (x - x0) as usize;
            pixels[idx] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        out.extend(pixels);
        Some(out)
    }
}

/// Which rollout feeds the attention channel of a score map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RolloutMode {
    /// Expert rollout scaled by the aggregator's CLS to MT rollout.
    #[default]
    TwoStage,
    /// Expert rollout alone, per modality.
    ExpertOnly,
}

/// Per-patch scores of one sample under `mask`, not yet normalized.
pub fn explain_sample(
    params: &ModelParams,
    sample: &SampleRecord,
    mask: ModalityMask,
    mode: RolloutMode,
) -> Result<PatchScoreMap> {
    let trace = forward(sample, mask, params, &mut Rng::new(0), false)?;
    let predicted = trace.predicted();
    let attention = match mode {
        RolloutMode::TwoStage => patch_attention(&trace)?,
        RolloutMode::ExpertOnly => expert_patch_attention(&trace)?,
    };
    let mut entries = Vec::new();
    for (m, weights) in attention {
        let bag = &sample.bags[&m];
        let scores = (0..bag.n_patches())
            .map(|j| patch_class_scores(&bag.select(&[j])?, params))
            .collect::<Result<Vec<_>>>()?;
        let ca = class_attention(&weights, &scores, predicted)?;
        for (j, probs) in scores.into_iter().enumerate() {
            entries.push(PatchScore {
                modality: m,
                patch: j,
                coord: None,
                rollout: weights[j],
                class_probs: probs,
                class_attention: ca[j],
            });
        }
    }
    Ok(PatchScoreMap {
        sample_id: sample.sample_id.clone(),
        predicted,
        n_classes: params.config().n_classes,
        entries,
        normalized: false,
    })
}

/// Several bags patched from one slide at shifted offsets, with slide coordinates per patch.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapBagSet {
    pub slide_id: String,
    pub modality: usize,
    pub bags: Vec<FeatureBag>,
    pub coords: Vec<Vec<(i64, i64)>>,
    /// Every slide position that must be covered; `None` accepts whatever the bags cover.
    pub grid: Option<Vec<(i64, i64)>>,
}

impl OverlapBagSet {
    pub fn new(
        slide_id: impl Into<String>,
        bags: Vec<FeatureBag>,
        coords: Vec<Vec<(i64, i64)>>,
        grid: Option<Vec<(i64, i64)>>,
    ) -> Result<Self> {
        let first = bags
            .first()
            .ok_or_else(|| Error::Data("overlap bag set without bags".into()))?;
        let modality = first.modality;
        if bags.len() != coords.len() {
            return Err(Error::Data(format!("{} bags but {} coordinate lists", bags.len(), coords.len())));
        }
        for (b, c) in bags.iter().zip(&coords) {
            if b.modality != modality {
                return Err(Error::Data(format!(
                    "bag {} is {}, set is {}",
                    b.slide_id,
                    modality_name(b.modality),
                    modality_name(modality)
                )));
            }
            if c.len() != b.n_patches() {
                return Err(Error::Data(format!(
                    "bag {} has {} patches but {} coordinates",
                    b.slide_id,
                    b.n_patches(),
                    c.len()
                )));
            }
        }
        Ok(Self {
            slide_id: slide_id.into(),
            modality,
            bags,
            coords,
            grid,
        })
    }
}

/// Averages per-bag maps per slide coordinate, then normalizes.
pub fn aggregate_overlaps(set: &OverlapBagSet, maps: &[PatchScoreMap]) -> Result<PatchScoreMap> {
    if maps.len() != set.bags.len() {
        return Err(Error::Data(format!("{} score maps for {} bags", maps.len(), set.bags.len())));
    }
    let n_classes = maps[0].n_classes;
    struct Acc {
        rollout: f64,
        class_attention: f64,
        probs: Vec<f64>,
        n: usize,
    }
    let mut acc: BTreeMap<(i64, i64), Acc> = BTreeMap::new();
    let mut votes = vec![0usize; n_classes];
    for (b, map) in maps.iter().enumerate() {
        let coords = &set.coords[b];
        let entries: Vec<&PatchScore> = map.entries.iter().filter(|e| e.modality == set.modality).collect();
        if entries.len() != coords.len() || map.n_classes != n_classes {
            return Err(Error::Data(format!(
                "score map {b} covers {} patches of {}, bag has {}",
                entries.len(),
                modality_name(set.modality),
                coords.len()
            )));
        }
        votes[map.predicted] += 1;
        for e in entries {
            let a = acc.entry(coords[e.patch]).or_insert_with(|| Acc {
                rollout: 0.0,
                class_attention: 0.0,
                probs: vec![0.0; n_classes],
                n: 0,
            });
            a.rollout += e.rollout;
            a.class_attention += e.class_attention;
            a.probs.iter_mut().zip(&e.class_probs).for_each(|(s, p)| *s += p);
            a.n += 1;
        }
    }
    if let Some(grid) = &set.grid {
        if let Some(c) = grid.iter().find(|c| !acc.contains_key(c)) {
            return Err(Error::Data(format!("slide {} has zero coverage at {c:?}", set.slide_id)));
        }
    }
    let votes_f: Vec<f64> = votes.iter().map(|v| *v as f64).collect();
    let entries = acc
        .into_iter()
        .enumerate()
        .map(|(i, (coord, a))| {
            let n = a.n as f64;
            PatchScore {
                modality: set.modality,
                patch: i,
                coord: Some(coord),
                rollout: a.rollout / n,
                class_probs: a.probs.iter().map(|p| p / n).collect(),
                class_attention: a.class_attention / n,
            }
        })
        .collect();
    let mut out = PatchScoreMap {
        sample_id: set.slide_id.clone(),
        predicted: argmax(&votes_f),
        n_classes,
        entries,
        normalized: false,
    };
    out.normalize();
    Ok(out)
}

/// Forwards every bag of the set on its own (single-modality input) and aggregates.
pub fn explain_overlap_set(params: &ModelParams, set: &OverlapBagSet, mode: RolloutMode) -> Result<PatchScoreMap> {
    let maps = set
        .bags
        .iter()
        .map(|bag| {
            let sample = SampleRecord::new(bag.slide_id.clone(), "", "", 0, vec![bag.clone()])?;
            explain_sample(params, &sample, ModalityMask::single(set.modality), mode)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_overlaps(set, &maps)
}

fn parse_coords(text: &str, path: &Path) -> Result<Vec<(i64, i64)>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (x, y) = l
                .split_once(',')
                .ok_or_else(|| Error::Data(format!("{}: expected x,y, got {l:?}", path.display())))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<i64>()
                    .map_err(|_| Error::Data(format!("{}: bad coordinate {l:?}", path.display())))
            };
            Ok((parse(x)?, parse(y)?))
        })
        .collect()
}

fn render_coords(coords: &[(i64, i64)]) -> String {
    coords.iter().map(|(x, y)| format!("{x},{y}\n")).collect()
}

/// Reads a directory of `NAME.unibag` files, each with a sibling `NAME.coords`
/// (one `x,y` line per patch), and an optional `grid.coords`.
pub fn read_overlap_set(dir: &Path) -> Result<OverlapBagSet> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "unibag"))
        .collect();
    paths.sort();
    let mut bags = Vec::new();
    let mut coords = Vec::new();
    for p in paths {
        let cpath = p.with_extension("coords");
        let text = String::from_utf8(read_file(&cpath)?)
            .map_err(|_| Error::Data(format!("{} is not UTF-8", cpath.display())))?;
        coords.push(parse_coords(&text, &cpath)?);
        bags.push(read_bag(&p)?);
    }
    let gpath = dir.join("grid.coords");
    let grid = if gpath.exists() {
        let text = String::from_utf8(read_file(&gpath)?)
            .map_err(|_| Error::Data(format!("{} is not UTF-8", gpath.display())))?;
        Some(parse_coords(&text, &gpath)?)
    } else {
        None
    };
    let slide = dir.file_name().map_or("slide".into(), |n| n.to_string_lossy().into_owned());
    OverlapBagSet::new(slide, bags, coords, grid)
}

pub fn write_overlap_set(dir: &Path, set: &OverlapBagSet) -> Result<()> {
    for (bag, c) in set.bags.iter().zip(&set.coords) {
        crate::data::write_bag(&dir.join(format!("{}.unibag", bag.slide_id)), bag)?;
        write_atomic(&dir.join(format!("{}.coords", bag.slide_id)), render_coords(c).as_bytes())?;
    }
    if let Some(grid) = &set.grid {
        write_atomic(&dir.join("grid.coords"), render_coords(grid).as_bytes())?;
    }
    Ok(())
}

/// Writes `scores.tsv` plus one graymap per modality and channel when coordinates exist.
pub fn write_score_map(dir: &Path, map: &PatchScoreMap) -> Result<Vec<PathBuf>> {
    let mut written = vec![dir.join("scores.tsv")];
    write_atomic(&written[0], map.render().as_bytes())?;
    let mods: BTreeSet<usize> = map.entries.iter().map(|e| e.modality).collect();
    let channels = [Channel::Rollout, Channel::ClassAttention]
        .into_iter()
        .chain((0..map.n_classes).map(Channel::ClassProb));
    for ch in channels {
        for &m in &mods {
            if let Some(img) = map.render_pgm(m, ch) {
                let p = dir.join(format!("{}_{}.pgm", modality_name(m), ch.name()));
                write_atomic(&p, &img)?;
                written.push(p);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(rows: &[Vec<f64>]) -> AttentionRecord {
        AttentionRecord::new(vec![Tensor::from_rows(rows).unwrap()]).unwrap()
    }

    #[test]
    fn identity_attention_rolls_out_to_identity() {
        let id = record(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let r = rollout(&[id.clone(), id.clone(), id]).unwrap();
        assert_eq!(r.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn single_layer_is_half_residual() {
        let r = rollout(&[record(&[vec![0.2, 0.8], vec![0.5, 0.5]])]).unwrap();
        let expect = [0.6, 0.4, 0.25, 0.75];
        for (a, b) in r.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_tokens_rejected() {
        let a = record(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = record(&[vec![1.0]]);
        assert!(rollout(&[a, b]).is_err());
        assert!(rollout(&[]).is_err());
    }

    #[test]
    fn class_attention_products() {
        let att = [0.0, 0.5, 1.0];
        let scores = vec![vec![0.3, 0.7], vec![0.5, 0.5], vec![0.0, 1.0]];
        assert_eq!(class_attention(&att, &scores, 1).unwrap(), vec![0.0, 0.25, 1.0]);
        assert!(class_attention(&att[..2], &scores, 1).is_err());
    }

    fn entry(patch: usize, rollout: f64) -> PatchScore {
        PatchScore {
            modality: 0,
            patch,
            coord: None,
            rollout,
            class_probs: vec![0.5, 0.5],
            class_attention: rollout / 2.0,
        }
    }

    fn set(coords: Vec<Vec<(i64, i64)>>, grid: Option<Vec<(i64, i64)>>) -> OverlapBagSet {
        let bags = coords
            .iter()
            .enumerate()
            .map(|(b, c)| FeatureBag::new(0, format!("b{b}"), Tensor::zeros(&[c.len(), 2])).unwrap())
            .collect();
        OverlapBagSet::new("slide", bags, coords, grid).unwrap()
    }

    fn map(values: &[f64]) -> PatchScoreMap {
        PatchScoreMap {
            sample_id: "x".into(),
            predicted: 0,
            n_classes: 2,
            entries: values.iter().enumerate().map(|(i, v)| entry(i, *v)).collect(),
            normalized: false,
        }
    }

    #[test]
    fn complementary_scores_average_to_one() {
        let s = set(vec![vec![(0, 0), (1, 0)], vec![(0, 0), (1, 0)]], None);
        // Means 1.0 at (0,0) and 0.5 at (1,0) before normalization.
        let out = aggregate_overlaps(&s, &[map(&[0.3, 0.2]), map(&[1.7, 0.8])]).unwrap();
        assert_eq!(out.entries[0].rollout, 1.0);
        assert_eq!(out.entries[1].rollout, 0.0);
        assert!(out.entries.iter().all(|e| (e.class_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_coverage_is_an_error() {
        let s = set(vec![vec![(0, 0)]], Some(vec![(0, 0), (0, 1)]));
        let err = aggregate_overlaps(&s, &[map(&[0.3])]).unwrap_err();
        assert!(err.to_string().contains("zero coverage"));
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let mut m = map(&[0.4, 0.4, 0.4]);
        m.normalize();
        assert!(m.entries.iter().all(|e| e.rollout == 0.0 && e.class_attention == 0.0));
    }

    #[test]
    fn pgm_header_and_size() {
        let s = set(vec![vec![(0, 0), (2, 1)]], None);
        let out = aggregate_overlaps(&s, &[map(&[0.0, 1.0])]).unwrap();
        let img = out.render_pgm(0, Channel::Rollout).unwrap();
        assert!(img.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(img.len(), 11 + 6);
        assert_eq!(img[11 + 5], 255);
    }
}

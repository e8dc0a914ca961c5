//! Five-fold cross-validation splits grouped by individual.
//!
//! Individuals are sorted, shuffled with the `Split` stream of the seed and
//! dealt into five groups whose sizes differ by at most one. Fold `k` tests on
//! group `k`, validates on group `(k + 1) mod 5` and trains on the rest.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::codec::write_atomic;
use crate::data::sample::SampleRecord;
use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};

pub const N_FOLDS: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub fold_id: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    pub fn as_str(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }
}

impl SplitPlan {
    pub fn part(&self, p: Part) -> &[String] {
        match p {
            Part::Train => &self.train,
            Part::Val => &self.val,
            Part::Test => &self.test,
        }
    }

    /// Records of part `p`, in split order.
    pub fn select<'r>(&self, records: &'r [SampleRecord], p: Part) -> Result<Vec<&'r SampleRecord>> {
        let index: HashMap<&str, &SampleRecord> =
            records.iter().map(|r| (r.sample_id.as_str(), r)).collect();
        self.part(p)
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Data(format!("split references unknown sample {id:?}")))
            })
            .collect()
    }

    /// Checks disjointness and that no individual spans two parts.
    pub fn validate(&self, records: &[SampleRecord]) -> Result<()> {
        let individual: HashMap<&str, &str> = records
            .iter()
            .map(|r| (r.sample_id.as_str(), r.individual_id.as_str()))
            .collect();
        let mut owner: HashMap<&str, Part> = HashMap::new();
        let mut seen = BTreeSet::new();
        for p in [Part::Train, Part::Val, Part::Test] {
            for id in self.part(p) {
                if !seen.insert(id.as_str()) {
                    return Err(Error::Data(format!("sample {id:?} appears twice in fold {}", self.fold_id)));
                }
                let ind = individual
                    .get(id.as_str())
                    .ok_or_else(|| Error::Data(format!("split references unknown sample {id:?}")))?;
                if let Some(prev) = owner.insert(ind, p) {
                    if prev != p {
                        return Err(Error::Data(format!(
                            "individual {ind:?} spans {} and {} in fold {}",
                            prev.as_str(),
                            p.as_str(),
                            self.fold_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn make_splits(records: &[SampleRecord], seed: u64) -> Result<Vec<SplitPlan>> {
    let mut individuals: Vec<&str> = records
        .iter()
        .map(|r| r.individual_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if individuals.len() < N_FOLDS {
        return Err(Error::Data(format!(
            "need at least {N_FOLDS} distinct individuals for grouped splits, found {}",
            individuals.len()
        )));
    }
    Rng::stream(seed, Stream::Split).shuffle(&mut individuals);
    let mut group_of: HashMap<&str, usize> = HashMap::new();
    let (base, extra) = (individuals.len() / N_FOLDS, individuals.len() % N_FOLDS);
    let mut it = individuals.iter();
    for g in 0..N_FOLDS {
        let size = base + usize::from(g < extra);
        for ind in it.by_ref().take(size) {
            group_of.insert(ind, g);
        }
    }
    Ok((0..N_FOLDS)
        .map(|k| {
            let val_group = (k + 1) % N_FOLDS;
            let mut plan = SplitPlan {
                fold_id: k,
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            for r in records {
                let g = group_of[r.individual_id.as_str()];
                let bucket = if g == k {
                    &mut plan.test
                } else if g == val_group {
                    &mut plan.val
                } else {
                    &mut plan.train
                };
                bucket.push(r.sample_id.clone());
            }
            plan
        })
        .collect())
}

/// One `fold,part,sample_id` line per assignment.
pub fn render_splits(plans: &[SplitPlan]) -> String {
    let mut s = String::from("# fold,part,sample_id\n");
    for plan in plans {
        for p in [Part::Train, Part::Val, Part::Test] {
            for id in plan.part(p) {
                let _ = writeln!(s, "{},{},{}", plan.fold_id, p.as_str(), id);
            }
        }
    }
    s
}

pub fn parse_splits(text: &str) -> Result<Vec<SplitPlan>> {
    let mut plans: Vec<SplitPlan> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Data(format!("split line {}: {line:?}", lineno + 1));
        if f.len() != 3 {
            return Err(bad());
        }
        let fold: usize = f[0].parse().map_err(|_| bad())?;
        while plans.len() <= fold {
            plans.push(SplitPlan {
                fold_id: plans.len(),
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            });
        }
        let plan = &mut plans[fold];
        match f[1] {
            "train" => plan.train.push(f[2].to_string()),
            "val" => plan.val.push(f[2].to_string()),
            "test" => plan.test.push(f[2].to_string()),
            _ => return Err(bad()),
        }
    }
    Ok(plans)
}

pub fn write_splits(path: &Path, plans: &[SplitPlan]) -> Result<()> {
    write_atomic(path, render_splits(plans).as_bytes())
}

pub fn read_splits(path: &Path) -> Result<Vec<SplitPlan>> {
    parse_splits(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

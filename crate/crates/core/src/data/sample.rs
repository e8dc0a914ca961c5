use std::collections::BTreeMap;
use std::fmt;

use crate::data::bag::FeatureBag;
use crate::error::{Error, Result};

/// Display names of the default four stainings, indexed by modality id.
pub const DEFAULT_MODALITIES: [&str; 4] = ["HE", "EvG", "vK", "Movat"];

/// Class names in increasing disease severity, indexed by class id.
pub const CLASS_NAMES: [&str; 5] = ["AIT", "PIT", "EFA", "LFA", "CFA"];

pub fn modality_name(m: usize) -> String {
    DEFAULT_MODALITIES
        .get(m)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("m{m}"))
}

/// Parses a modality by display name (case-insensitive) or numeric id.
pub fn parse_modality(s: &str) -> Option<usize> {
    let s = s.trim();
    DEFAULT_MODALITIES
        .iter()
        .position(|n| n.eq_ignore_ascii_case(s))
        .or_else(|| s.strip_prefix('m').unwrap_or(s).parse().ok())
}

pub fn class_name(c: usize) -> String {
    CLASS_NAMES
        .get(c)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("c{c}"))
}

pub fn parse_label(s: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|n| *n == s.trim())
}

/// A set of modality ids, iterated in ascending (canonical) order.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ModalityMask(u64);

impl ModalityMask {
    pub const MAX_MODALITIES: usize = 64;

    pub fn empty() -> Self {
        Self(0)
    }

    pub fn all(n: usize) -> Self {
        assert!(n <= Self::MAX_MODALITIES);
        if n == 64 {
            Self(u64::MAX)
        } else {
            Self((1u64 << n) - 1)
        }
    }

    pub fn single(m: usize) -> Self {
        Self::empty().with(m)
    }

    pub fn from_ids(ids: impl IntoIterator<Item = usize>) -> Self {
        ids.into_iter().fold(Self::empty(), Self::with)
    }

    pub fn with(self, m: usize) -> Self {
        assert!(m < Self::MAX_MODALITIES);
        Self(self.0 | (1 << m))
    }

    pub fn without(self, m: usize) -> Self {
        if m >= Self::MAX_MODALITIES {
            return self;
        }
        Self(self.0 & !(1 << m))
    }

    pub fn contains(self, m: usize) -> bool {
        m < Self::MAX_MODALITIES && self.0 & (1 << m) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersect(self, other: Self) -> Self {
        Self(self.0 & other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..Self::MAX_MODALITIES).filter(move |m| self.contains(*m))
    }

    pub fn bits(self) -> u64 {
        self.0
    }
}

impl fmt::Debug for ModalityMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(modality_name)).finish()
    }
}

impl fmt::Display for ModalityMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.iter().map(modality_name).collect();
        write!(f, "{}", names.join("+"))
    }
}

/// One coronary segment: a label and up to one bag per modality.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub individual_id: String,
    pub segment_id: String,
    pub label: usize,
    pub bags: BTreeMap<usize, FeatureBag>,
}

impl SampleRecord {
    pub fn new(
        sample_id: impl Into<String>,
        individual_id: impl Into<String>,
        segment_id: impl Into<String>,
        label: usize,
        bags: impl IntoIterator<Item = FeatureBag>,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        let mut map = BTreeMap::new();
        for b in bags {
            let m = b.modality;
            if map.insert(m, b).is_some() {
                return Err(Error::Data(format!("sample {sample_id}: duplicate bag for modality {m}")));
            }
        }
        if map.is_empty() {
            return Err(Error::Data(format!("sample {sample_id} has no bags")));
        }
        Ok(Self {
            sample_id,
            individual_id: individual_id.into(),
            segment_id: segment_id.into(),
            label,
            bags: map,
        })
    }

    /// Modalities with a bag.
    pub fn present(&self) -> ModalityMask {
        ModalityMask::from_ids(self.bags.keys().copied())
    }

    pub fn bag(&self, m: usize) -> Option<&FeatureBag> {
        self.bags.get(&m)
    }

    /// Copy of the sample with every bag outside `keep` removed.
    pub fn restricted(&self, keep: ModalityMask) -> Self {
        Self {
            bags: self
                .bags
                .iter()
                .filter(|(m, _)| keep.contains(**m))
                .map(|(m, b)| (*m, b.clone()))
                .collect(),
            ..self.clone()
        }
    }
}

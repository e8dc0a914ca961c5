//! Run configuration: model and training settings plus data paths, read from a
//! `key = value` file with command-line `key=value` overrides.

use std::path::{Path, PathBuf};

use crate::codec::read_file;
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::model::{ModelConfig, ModelKind, MODEL_KEYS};
use crate::rng::ALGORITHM_ID;
use crate::train::{TrainConfig, BATCH_SIZE, TRAIN_KEYS};

const PATH_KEYS: [&str; 2] = ["manifest", "splits"];
/// Echoed by [`RunConfig::render`]; accepted on input only at their fixed values.
const FIXED_KEYS: [&str; 2] = ["batch_size", "rng"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub kind: ModelKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub manifest: Option<PathBuf>,
    pub splits: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Unicorn,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            manifest: None,
            splits: None,
        }
    }
}

fn known(key: &str) -> bool {
    key == "model"
        || MODEL_KEYS.contains(&key)
        || TRAIN_KEYS.contains(&key)
        || PATH_KEYS.contains(&key)
        || FIXED_KEYS.contains(&key)
}

impl RunConfig {
    /// Applies `kv` over `self`; relative paths are resolved against `base`.
    pub fn apply(&mut self, kv: &KeyValues, base: &Path) -> Result<()> {
        kv.reject_unknown(known)?;
        if let Some(kind) = kv.get("model") {
            self.kind = ModelKind::parse(kind)?;
        }
        self.model.apply(kv)?;
        self.train.apply(kv)?;
        if let Some(b) = kv.parse_opt::<usize>("batch_size")? {
            if b != BATCH_SIZE {
                return Err(Error::Config(format!("batch_size is fixed at {BATCH_SIZE}, got {b}")));
            }
        }
        if let Some(r) = kv.get("rng") {
            if r != ALGORITHM_ID {
                return Err(Error::Config(format!("rng {r:?} unsupported, only {ALGORITHM_ID}")));
            }
        }
        let resolve = |key: &str| kv.get(key).map(|p| base.join(p));
        if let Some(p) = resolve("manifest") {
            self.manifest = Some(p);
        }
        if let Some(p) = resolve("splits") {
            self.splits = Some(p);
        }
        Ok(())
    }

    /// Reads `path` (if any), then applies each `key=value` override in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = path {
            let text = String::from_utf8(read_file(path)?)
                .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
            let kv = KeyValues::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            cfg.apply(&kv, path.parent().unwrap_or(Path::new("")))?;
        }
        let mut kv = KeyValues::default();
        for o in overrides {
            kv.set_assignment(o)?;
        }
        cfg.apply(&kv, Path::new(""))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn manifest(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::Config("no manifest configured (set manifest=...)".into()))
    }

    pub fn splits(&self) -> Result<&Path> {
        self.splits
            .as_deref()
            .ok_or_else(|| Error::Config("no split file configured (set splits=...)".into()))
    }

    /// Every field as `key=value` lines; parses back to an equal config.
    pub fn render(&self) -> String {
        let mut s = format!("model={}\n", self.kind.as_str());
        s.push_str(&self.model.render());
        s.push_str(&self.train.render());
        for (k, v) in [("manifest", &self.manifest), ("splits", &self.splits)] {
            if let Some(p) = v {
                s.push_str(&format!("{k}={}\n", p.display()));
            }
        }
        s
    }
}

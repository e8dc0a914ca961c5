//! `UNICKPT1` checkpoint files.
//!
//! ```text
//! "UNICKPT1"  version u32
//! meta_len u32  meta UTF-8 (kind=..., then the model config as key=value lines)
//! count u32
//! per tensor: name_len u32, name UTF-8, rank u32, extents u32 x rank, f64 LE payload
//! ```
//!
//! All integers are little-endian. Tensors appear in parameter registration order.

use std::path::Path;

use crate::codec::{checked_numel, read_file, write_atomic, Reader};
use crate::error::{Error, FormatError, Result};
use crate::kv::KeyValues;
use crate::model::{AnyModel, Classifier, ModelConfig, ModelKind, MODEL_KEYS};

pub const MAGIC: &[u8; 8] = b"UNICKPT1";
pub const VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn metadata(model: &AnyModel) -> String {
    format!("kind={}\n{}", model.kind().as_str(), model.config().render())
}

pub fn encode_checkpoint(model: &AnyModel) -> Result<Vec<u8>> {
    let store = model.store();
    let meta = metadata(model);
    let mut out = Vec::with_capacity(64 + meta.len() + 8 * store.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    push_u32(&mut out, meta.len())?;
    out.extend_from_slice(meta.as_bytes());
    push_u32(&mut out, store.len())?;
    for id in store.ids() {
        let name = store.name(id);
        let t = store.get(id);
        push_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, t.shape().len())?;
        for e in t.shape() {
            push_u32(&mut out, *e)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn text<'b>(r: &mut Reader<'b>, what: &str) -> Result<&'b str, FormatError> {
    let n = r.u32()? as usize;
    let bytes = r.take(n)?;
    std::str::from_utf8(bytes).map_err(|_| FormatError::InvalidText(format!("{what} is not UTF-8")))
}

/// Decodes a checkpoint and rebuilds the model it describes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<AnyModel> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC, "UNICKPT1")?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let meta = text(&mut r, "metadata")?;
    let kv = KeyValues::parse(meta).map_err(|e| FormatError::InvalidText(e.to_string()))?;
    let kind = ModelKind::parse(
        kv.get("kind")
            .ok_or_else(|| FormatError::InvalidText("metadata lacks kind".into()))?,
    )?;
    if let Some(k) = kv.keys().find(|k| *k != "kind" && !MODEL_KEYS.contains(k)) {
        return Err(FormatError::InvalidText(format!("unknown metadata key {k:?}")).into());
    }
    let mut config = ModelConfig::default();
    config.apply(&kv)?;
    let mut model = AnyModel::init(kind, &config, 0)?;

    let count = r.u32()? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name = text(&mut r, "tensor name")?.to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel = checked_numel(&shape)?;
        let raw = r.payload(numel, 8)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite(name).into());
        }
        tensors.push((name, shape, values));
    }
    r.finish()?;

    let store = model.store_mut();
    if count != store.len() {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint holds {count} tensors, a {} model with this config has {}",
            kind.as_str(),
            store.len()
        )));
    }
    for (name, shape, values) in tensors {
        store.set_values(&name, &shape, values)?;
    }
    Ok(model)
}

pub fn write_checkpoint(path: &Path, model: &AnyModel) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model)?)
}

pub fn read_checkpoint(path: &Path) -> Result<AnyModel> {
    let bytes = read_file(path)?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Decode(source) => Error::Format {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            n_modalities: 2,
            n_classes: 3,
            feat_dim: 3,
            model_dim: 4,
            n_heads: 2,
            blocks_per_expert: 1,
            blocks_aggregator: 1,
            dropout_p: 0.1,
        }
    }

    #[test]
    fn round_trip_every_kind() {
        for kind in [ModelKind::Unicorn, ModelKind::AttentionMil, ModelKind::SingleStream] {
            let m = AnyModel::init(kind, &small(), 9).unwrap();
            let bytes = encode_checkpoint(&m).unwrap();
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back.kind(), kind);
            assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
            for id in m.store().ids() {
                let a = m.store().get(id).data();
                let b = back.store().get(id).data();
                assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn every_truncation_is_truncated() {
        let m = AnyModel::init(ModelKind::AttentionMil, &small(), 1).unwrap();
        let bytes = encode_checkpoint(&m).unwrap();
        for n in 0..bytes.len() {
            let err = decode_checkpoint(&bytes[..n]).unwrap_err();
            assert_eq!(err.format_error().map(FormatError::class), Some("truncated"), "prefix {n}");
        }
    }

    #[test]
    fn corrupt_headers() {
        let m = AnyModel::init(ModelKind::Unicorn, &small(), 1).unwrap();
        let bytes = encode_checkpoint(&m).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode_checkpoint(&bad).unwrap_err().format_error().unwrap().class(), "bad-magic");
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert_eq!(
            decode_checkpoint(&bad).unwrap_err().format_error().unwrap().class(),
            "unsupported-version"
        );
        let mut bad = bytes;
        bad.push(0);
        assert_eq!(decode_checkpoint(&bad).unwrap_err().format_error().unwrap().class(), "trailing-bytes");
    }
}

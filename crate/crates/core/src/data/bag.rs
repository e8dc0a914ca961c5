//! `UNIBAG1` feature-bag files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field                       |
//! |-------|-----------------------------|
//! | 8     | magic `UNIBAG1\0`           |
//! | 4     | version (`u32`, = 1)        |
//! | 4     | modality id (`u32`)         |
//! | 4     | rows (`u32`)                |
//! | 4     | cols (`u32`)                |
//! | 4·r·c | row-major `f32` payload     |

use std::path::Path;

use crate::codec::{checked_numel, read_file, write_atomic, Reader};
use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

pub const BAG_MAGIC: &[u8; 8] = b"UNIBAG1\0";
pub const BAG_VERSION: u32 = 1;
pub const BAG_HEADER_LEN: usize = 24;

/// One staining's patch embeddings for one slide.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBag {
    pub modality: usize,
    pub slide_id: String,
    matrix: Tensor,
}

impl FeatureBag {
    pub fn new(modality: usize, slide_id: impl Into<String>, matrix: Tensor) -> Result<Self> {
        if matrix.shape().len() != 2 || matrix.rows() == 0 || matrix.cols() == 0 {
            return Err(Error::Data(format!(
                "feature bag must be a non-empty N x D matrix, got shape {:?}",
                matrix.shape()
            )));
        }
        Ok(Self {
            modality,
            slide_id: slide_id.into(),
            matrix,
        })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn n_patches(&self) -> usize {
        self.matrix.rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Bag restricted to the given patch rows.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Self::new(self.modality, self.slide_id.clone(), self.matrix.select_rows(rows)?)
    }
}

pub fn encode_bag(bag: &FeatureBag) -> Result<Vec<u8>> {
    let (rows, cols) = (bag.n_patches(), bag.feat_dim());
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Data(format!("{what} {v} does not fit the bag header")))
    };
    let mut out = Vec::with_capacity(BAG_HEADER_LEN + 4 * rows * cols);
    out.extend_from_slice(BAG_MAGIC);
    out.extend_from_slice(&BAG_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(bag.modality, "modality")?.to_le_bytes());
    out.extend_from_slice(&to_u32(rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&to_u32(cols, "cols")?.to_le_bytes());
    for &v in bag.matrix.data() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::NonFinite(format!("value {v} overflows f32 in bag {}", bag.slide_id)));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a bag payload into `(modality, matrix)`.
pub fn decode_bag(bytes: &[u8]) -> Result<(usize, Tensor), FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(BAG_MAGIC, "UNIBAG1")?;
    let version = r.u32()?;
    if version != BAG_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let modality = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(FormatError::ExtentOverflow(format!("empty bag extents {rows}x{cols}")));
    }
    let n = checked_numel(&[rows, cols])?;
    let payload = r.payload(n, 4)?;
    r.finish()?;
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite("bag payload".into()));
    }
    let t = Tensor::new(&[rows, cols], data).map_err(|e| FormatError::ExtentOverflow(e.to_string()))?;
    Ok((modality, t))
}

pub fn write_bag(path: &Path, bag: &FeatureBag) -> Result<()> {
    write_atomic(path, &encode_bag(bag)?)
}

/// Reads a bag; the slide id is taken from the file stem.
pub fn read_bag(path: &Path) -> Result<FeatureBag> {
    let bytes = read_file(path)?;
    let (modality, matrix) = decode_bag(&bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })?;
    let slide_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureBag::new(modality, slide_id, matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_bag(rows: usize, cols: usize, seed: u64) -> FeatureBag {
        let mut rng = Rng::new(seed);
        let t = Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.normal() * 3.0).collect()).unwrap();
        FeatureBag::new(2, "s", t).unwrap()
    }

    #[test]
    fn single_value_bag_layout() {
        let bag = FeatureBag::new(0, "x", Tensor::new(&[1, 1], vec![0.0]).unwrap()).unwrap();
        let bytes = encode_bag(&bag).unwrap();
        assert_eq!(bytes.len(), 28);
        assert_eq!(&bytes[..8], b"UNIBAG1\0");
        let (m, t) = decode_bag(&bytes).unwrap();
        assert_eq!(m, 0);
        assert_eq!(t.data(), &[0.0]);
        assert_eq!(t.data()[0].to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn round_trip_within_f32_quantization() {
        let bag = random_bag(8, 16, 3);
        let (m, t) = decode_bag(&encode_bag(&bag).unwrap()).unwrap();
        assert_eq!(m, 2);
        assert_eq!(t.shape(), &[8, 16]);
        for (a, b) in bag.matrix().data().iter().zip(t.data()) {
            assert_eq!(*b, (*a as f32) as f64);
        }
    }

    #[test]
    fn corrupted_magic_is_reported() {
        let mut bytes = encode_bag(&random_bag(2, 2, 1)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_bag(&bytes), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode_bag(&random_bag(3, 5, 1)).unwrap();
        for n in 0..bytes.len() {
            assert!(
                matches!(decode_bag(&bytes[..n]), Err(FormatError::Truncated { .. })),
                "prefix of {n} bytes"
            );
        }
    }

    #[test]
    fn header_errors() {
        let mut bytes = encode_bag(&random_bag(2, 2, 1)).unwrap();
        bytes[8] = 9;
        assert_eq!(decode_bag(&bytes), Err(FormatError::UnsupportedVersion(9)));
        let mut bytes = encode_bag(&random_bag(2, 2, 1)).unwrap();
        bytes.push(0);
        assert_eq!(decode_bag(&bytes), Err(FormatError::TrailingBytes(1)));
        let mut huge = encode_bag(&random_bag(1, 1, 1)).unwrap();
        huge[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[20..24].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            decode_bag(&huge),
            Err(FormatError::Truncated { .. } | FormatError::ExtentOverflow(_))
        ));
    }
}

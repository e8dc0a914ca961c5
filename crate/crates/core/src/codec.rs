//! Little-endian byte helpers shared by the binary formats, plus atomic file writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, FormatError, Result};

pub(crate) struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    pub fn new(bytes: &'b [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    /// Checks a leading magic string. A short file whose bytes agree with the
    /// magic so far is reported as truncated rather than as a bad magic.
    pub fn magic(&mut self, magic: &'static [u8], name: &'static str) -> Result<(), FormatError> {
        let n = magic.len().min(self.remaining());
        if self.bytes[self.pos..self.pos + n] != magic[..n] {
            return Err(FormatError::BadMagic { expected: name });
        }
        self.take(magic.len()).map(|_| ())
    }

    pub fn take(&mut self, n: usize) -> Result<&'b [u8], FormatError> {
        if n > self.remaining() {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - self.remaining(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    /// Reads `count` little-endian values of `width` bytes, guarding the size computation.
    pub fn payload(&mut self, count: usize, width: usize) -> Result<&'b [u8], FormatError> {
        let n = count
            .checked_mul(width)
            .ok_or_else(|| FormatError::ExtentOverflow(format!("{count} elements of {width} bytes")))?;
        self.take(n)
    }

    pub fn finish(self) -> Result<(), FormatError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

/// Product of extents, rejecting overflow.
pub(crate) fn checked_numel(extents: &[usize]) -> Result<usize, FormatError> {
    extents.iter().try_fold(1usize, |acc, &e| {
        acc.checked_mul(e)
            .ok_or_else(|| FormatError::ExtentOverflow(format!("extents {extents:?}")))
    })
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures when decoding the binary bag and checkpoint formats.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("extent overflow: {0}")]
    ExtentOverflow(String),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid text field: {0}")]
    InvalidText(String),
    #[error("non-finite value in tensor {0:?}")]
    NonFinite(String),
}

impl FormatError {
    /// Short stable identifier used in machine-readable diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            FormatError::BadMagic { .. } => "bad-magic",
            FormatError::UnsupportedVersion(_) => "unsupported-version",
            FormatError::Truncated { .. } => "truncated",
            FormatError::ExtentOverflow(_) => "extent-overflow",
            FormatError::TrailingBytes(_) => "trailing-bytes",
            FormatError::InvalidText(_) => "invalid-text",
            FormatError::NonFinite(_) => "non-finite",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format error in {path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error(transparent)]
    Decode(#[from] FormatError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Machine-parsable error class, also used to pick the process exit code.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Shape(_) | Error::InvalidArgument(_) | Error::Data(_) => "data",
            Error::Format { .. } | Error::Decode(_) => "format",
            Error::NonFinite(_) | Error::Numeric(_) => "numeric",
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
            Error::ConfigMismatch(_) => "config-mismatch",
            Error::Fold { source, .. } => source.class(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "config" => 2,
            "numeric" => 4,
            "config-mismatch" => 5,
            _ => 3,
        }
    }

    pub fn format_error(&self) -> Option<&FormatError> {
        match self {
            Error::Format { source, .. } | Error::Decode(source) => Some(source),
            Error::Fold { source, .. } => source.format_error(),
            _ => None,
        }
    }
}

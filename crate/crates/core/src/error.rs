use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure families surfaced by the engine.
///
/// The CLI maps each family onto a distinct exit code, so new variants should
/// slot into an existing family (see [`Error::family`]) rather than inventing
/// a new one.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("weight file: {0}")]
    Weights(#[from] WeightError),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
}

/// Coarse grouping of [`Error`] variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Usage,
    Io,
    Format,
    Shape,
    Numeric,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn family(&self) -> ErrorFamily {
        match self {
            Error::Io { .. } => ErrorFamily::Io,
            Error::Decode { .. } | Error::Weights(_) | Error::Format { .. } | Error::Dataset(_) => {
                ErrorFamily::Format
            }
            Error::Shape { .. } => ErrorFamily::Shape,
            Error::Numeric(_) => ErrorFamily::Numeric,
            Error::Config(_) => ErrorFamily::Usage,
        }
    }
}

/// Errors raised while reading or validating a portable weight file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightError {
    #[error("file too short for header")]
    Header,
    #[error("bad magic {0:?}, expected \"LWTS\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated while reading {0}")]
    Truncated(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("unsupported dtype code {code} for tensor {name}")]
    Dtype { name: String, code: u8 },
    #[error("tensor name is not valid UTF-8")]
    Name,
    #[error("duplicate tensor {0}")]
    Duplicate(String),
    #[error("trailing bytes after last tensor")]
    Trailing,
    #[error("missing tensors: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("unexpected tensors: {}", .0.join(", "))]
    Unexpected(Vec<String>),
    #[error("tensor {name} has dims {found:?}, expected {expected:?}")]
    Dims {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {0} contains non-finite values")]
    NonFinite(String),
}

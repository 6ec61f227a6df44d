//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the training, mining, and retrieval pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("layer {layer} ({kind}): {message}")]
    Layer {
        layer: usize,
        kind: &'static str,
        message: String,
    },

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes {found:?} in {path} (expected \"SIMN\")")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("unsupported container version {found} in {path} (expected {expected})")]
    UnsupportedVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("truncated file {path}: {message}")]
    Truncated { path: PathBuf, message: String },

    #[error("malformed container {path}: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("missing CIFAR-10 batch file {0}")]
    CifarMissingFile(PathBuf),

    #[error("CIFAR-10 file {path} has {records} records, expected {expected}")]
    CifarWrongSize {
        path: PathBuf,
        records: usize,
        expected: usize,
    },

    #[error("CIFAR-10 file {path} truncated: incomplete record at byte offset {offset}")]
    CifarTruncated { path: PathBuf, offset: usize },

    #[error("CIFAR-10 file {path}: label {label} > 9 at byte offset {offset}")]
    CifarBadLabel {
        path: PathBuf,
        offset: usize,
        label: u8,
    },

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Diverged {
        epoch: usize,
        batch: usize,
        message: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// Whether this error stems from user input (flags, config, data contract)
    /// rather than a runtime failure. The CLI maps this to exit code 2.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidArgument(_) | Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

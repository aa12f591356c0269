use std::io;

use thiserror::Error;

pub type Result<T, E = SidaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SidaError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("auxiliary selection failed: {0}")]
    Selection(String),

    #[error("domain not in bank: {0}")]
    MissingDomain(String),

    #[error("degenerate batch: every pixel carries the ignore label")]
    DegenerateBatch,

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("undefined metric: no class has a nonzero union")]
    UndefinedMetric,

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl SidaError {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        SidaError::Dimension {
            what,
            expected,
            got,
        }
    }

    /// True for failures that arise while running numerics, as opposed to bad input.
    pub fn is_runtime(&self) -> bool {
        matches!(self, SidaError::DegenerateBatch | SidaError::NonFinite(_))
    }
}

/// Parse failures for the binary bank/checkpoint files and the image formats.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("truncated payload: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("inconsistent channel counts: {0}")]
    Channels(String),

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("malformed content: {0}")]
    Malformed(String),
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("{op}: non-finite value produced")]
    NonFinite { op: String },
    #[error("gradcheck: non-finite value at coordinate {coordinate}")]
    NonFiniteAt { coordinate: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward already ran on this tape; reset it first")]
    BackwardTwice,
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("access mode error: {0}")]
    Mode(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("{path}: wrong magic number {found:#010x}, expected {expected:#010x}")]
    WrongMagic { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated payload ({found} bytes, expected {expected})")]
    Truncated {
        path: PathBuf,
        found: usize,
        expected: usize,
    },
    #[error("example count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint payload: {0}")]
    CorruptPayload(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("need at least {needed} rounds, trace has {found}")]
    TooFewRounds { needed: usize, found: usize },
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("invalid kind `{0}`")]
    InvalidKind(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 for usage and configuration
    /// problems, 1 for runtime and numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Mode(_)
            | Error::Config(_)
            | Error::UnknownKey(_)
            | Error::MissingCheckpoint(_)
            | Error::InvalidKind(_)
            | Error::LabelOutOfRange { .. } => 2,
            _ => 1,
        }
    }
}

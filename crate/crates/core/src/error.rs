use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("i/o error: {0}")]
    RawIo(#[from] io::Error),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("duplicate image id {0:?}")]
    DuplicateId(String),

    #[error("unknown image id {0:?}")]
    UnknownId(String),

    #[error("vocabulary is empty after filtering with min_support = {min_support}")]
    EmptyVocabulary { min_support: usize },

    #[error("negative weight {value} at row {row}, topic {topic:?}")]
    NegativeWeight { row: usize, topic: String, value: f64 },

    #[error("topic {0:?} has zero total mass")]
    ZeroMassTopic(String),

    #[error("row count mismatch: expected {expected}, found {found}")]
    RowCountMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("missing train/test split")]
    MissingSplit,

    #[error("concept {0:?} has no images")]
    EmptyPostings(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite training loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("input is constant; {0} is undefined")]
    ConstantInput(&'static str),

    #[error("only {overlap} concepts overlap with the external scores (need at least 3)")]
    InsufficientOverlap { overlap: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {line} has {found} cells, header has {expected}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("non-numeric value `{value}` in numeric column `{column}` (row {row})")]
    NonNumericCell {
        column: String,
        row: usize,
        value: String,
    },

    #[error("label column has a single class; at least two are required")]
    SingleClass,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("split fractions must be positive and sum to 1 (got sum {0})")]
    InvalidFractions(f64),

    #[error("requested {requested} samples from a pool of {available}")]
    PoolTooSmall { requested: usize, available: usize },

    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("malformed model bytes: {0}")]
    Malformed(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("invalid deletion request: {0}")]
    InvalidRequest(String),

    #[error("invalid posterior: {0}")]
    InvalidPosterior(String),

    #[error("attack cases are imbalanced: {positives} positive vs {negatives} negative")]
    Imbalanced { positives: usize, negatives: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidConfig(_) | Error::Json(_) => ErrorCategory::Config,
            Error::Io { .. }
            | Error::Csv(_)
            | Error::RaggedRow { .. }
            | Error::MissingColumn(_)
            | Error::NonNumericCell { .. }
            | Error::SingleClass
            | Error::EmptyDataset => ErrorCategory::Data,
            _ => ErrorCategory::Runtime,
        }
    }
}

use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("row {row} has norm {norm:e}, too small to normalize")]
    ZeroRow { row: usize, norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("batch of {got} rows is too small, need at least {need}")]
    BatchTooSmall { got: usize, need: usize },

    #[error("backward called without a cached forward pass")]
    NoForwardState,

    #[error("all labels in the batch belong to a single cluster")]
    SingleCluster,

    #[error("every instance in the batch lacks both negatives and a second view")]
    DegenerateBatch,

    #[error("{points} points cannot be split into {k} clusters")]
    TooFewPoints { points: usize, k: usize },

    #[error("partition lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("reference set for k-NN classification is empty")]
    EmptyReference,

    #[error("could not place {k} means {separation} apart within the attempt budget")]
    InfeasibleSeparation { k: usize, separation: f64 },

    #[error("dataset has no ground-truth labels")]
    LabelsMissing,

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("row {row} has {got} columns, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to load image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("invalid sample `{sample}`: {message}")]
    Validation { sample: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("defect ids cannot be separated across subsets: {}", ids.join(", "))]
    SplitConflict { ids: Vec<String> },

    #[error("empty defect mask")]
    EmptyDefectMask,

    #[error("cp synthesis exhausted after {restarts} image restarts")]
    CpExhausted { restarts: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("need at least {need} boxes, got {have}")]
    NotEnoughBoxes { have: usize, need: usize },

    #[error("no annotations to extract aspect ratios from")]
    EmptyAnnotations,

    #[error("undefined AP: no ground-truth boxes")]
    UndefinedAp,

    #[error("could not place position-mask boxes: {0}")]
    MaskPlacement(String),

    #[error("non-finite loss in `{term}` ({context})")]
    NonFiniteLoss { term: String, context: String },

    #[error("test set of cell `{cell}` has hash {found}, expected {expected}")]
    TestSetMismatch {
        cell: String,
        expected: String,
        found: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

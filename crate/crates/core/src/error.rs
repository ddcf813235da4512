use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("record {id}: {reason}")]
    MalformedRecord { id: String, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSynthetic(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("mask length mismatch: expected {expected}, got {got}")]
    MaskLength { expected: usize, got: usize },

    #[error("no annotator masks supplied")]
    NoMasks,

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("encoding length {got} does not match model max_len {expected}")]
    EncodingLength { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward called without a recorded forward pass")]
    MissingTape,

    #[error("alignment loss needs at least one unmasked position")]
    EmptyMask,

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid token id {id} (vocabulary size {size})")]
    InvalidToken { id: u32, size: usize },

    #[error("mixed modality: {0}")]
    MixedModality(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("conversion error: {0}")]
    Conversion(String),

    #[error("loss has no masked positions")]
    EmptyLoss,

    #[error("non-finite gradient for `{param}` at element {index}: {value}")]
    NonFiniteGradient {
        param: String,
        index: usize,
        value: f64,
    },

    #[error("frozen parameters changed during training (before {before}, after {after})")]
    FrozenViolation { before: String, after: String },

    #[error("template error: {0}")]
    Template(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("decode error at position {position}: {reason}")]
    Decode { position: usize, reason: String },

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

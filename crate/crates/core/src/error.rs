use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty sequence passed to {0}")]
    EmptySequence(&'static str),

    #[error("token id {id} out of range for table with {rows} rows")]
    TokenOutOfRange { id: usize, rows: usize },

    #[error("no stored embedding for example `{example_id}` role {role}")]
    MissingEmbedding { example_id: String, role: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid example `{id}`: {reason}")]
    InvalidExample { id: String, reason: String },

    #[error("loss node must be 1x1, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("non-finite training loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("format version mismatch: file has {found}, reader supports {expected}")]
    Version { found: u32, expected: u32 },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("malformed input {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short stable tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::EmptySequence(_) => "empty_sequence",
            Error::TokenOutOfRange { .. } => "token_out_of_range",
            Error::MissingEmbedding { .. } => "missing_embedding",
            Error::Config(_) => "config",
            Error::InvalidExample { .. } => "invalid_example",
            Error::NonScalarLoss { .. } => "non_scalar_loss",
            Error::Diverged { .. } => "diverged",
            Error::Version { .. } => "version",
            Error::Integrity(_) => "integrity",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("attention row {row} has no permitted keys")]
    FullyMaskedRow { row: usize },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite values produced by `{op}`")]
    NonFinite { op: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed {kind}: {detail}")]
    Format { kind: &'static str, detail: String },

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("config error: {0}")]
    Config(String),

    #[error("encoder parameters must be frozen for stage-2 training")]
    EncoderNotFrozen,

    #[error("token index {0} is both committed and queried")]
    IndexCollision(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(kind: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { kind, detail: detail.into() }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::InvalidArgument(detail.into())
    }
}

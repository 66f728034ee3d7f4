use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("input `{0}` is not bound")]
    UnboundInput(String),

    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("backward requested before forward evaluation of node {0}")]
    BackwardBeforeForward(usize),

    #[error("seed shape {seed:?} does not match output shape {output:?}")]
    SeedShape { seed: Vec<usize>, output: Vec<usize> },

    #[error("gradient check requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("duplicate leaf name `{0}`")]
    DuplicateLeaf(String),

    #[error("zero-norm vector in cosine similarity at node {0}")]
    ZeroNorm(usize),

    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid probability table: {0}")]
    InvalidTable(String),

    #[error("enumeration space of {size} sequences exceeds bound {bound}")]
    EnumerationBound { size: u128, bound: u128 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error traces back to the caller's input (bad files, flags or
    /// config) rather than a defect in the library.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::InvalidArgument(_)
            | Error::Empty(_)
            | Error::InvalidTable(_)
            | Error::EnumerationBound { .. }
            | Error::Parse { .. }
            | Error::Config { .. }
            | Error::Diverged { .. }
            | Error::Checkpoint(_)
            | Error::Io(_)
            | Error::Json(_) => true,
            Error::ShapeMismatch { .. }
            | Error::UnboundInput(_)
            | Error::NonFinite { .. }
            | Error::BackwardBeforeForward(_)
            | Error::SeedShape { .. }
            | Error::NotScalar(_)
            | Error::DuplicateLeaf(_)
            | Error::ZeroNorm(_)
            | Error::TokenOutOfRange { .. }
            | Error::MissingParam(_) => false,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::InvalidArgument(detail.into())
    }
}

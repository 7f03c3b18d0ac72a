use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0}")]
    Capability(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("evaluation failed in layer {layer}: {message}")]
    Evaluation { layer: usize, message: String },

    #[error("inversion failed: {0}")]
    Inversion(String),

    #[error("objective is not finite at batch point {index}: {message}")]
    Objective { index: usize, message: String },

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("all {} restarts failed: {}", .0.len(), .0.join("; "))]
    Fit(Vec<String>),

    #[error("subspace error: {0}")]
    Subspace(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("proposal error: {0}")]
    Proposal(String),

    #[error("model format error: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(expected: usize, got: usize) -> Self {
        Error::Dimension { expected, got }
    }
}

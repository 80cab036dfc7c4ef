//! Shared error type for the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument or configuration was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Time integration failed to converge after exhausting sub-step halving.
    #[error("time integration failed for record `{record_id}`: {detail}")]
    Integration { record_id: String, detail: String },

    /// A matrix factorization failed even after jitter escalation.
    #[error("ill-conditioned matrix: {0}")]
    Conditioning(String),

    /// R-squared is undefined for a constant reference vector.
    #[error("undefined variance: actual values are constant")]
    ConstantTarget,

    /// Neural-network training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    /// Rejection sampling for a mode density fell below the acceptance floor.
    #[error("acceptance rate below 1% while sampling failure mode `{mode}`")]
    ModeAcceptance { mode: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A text artifact failed to parse.
    #[error("parse error in {path} (line {line}): {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

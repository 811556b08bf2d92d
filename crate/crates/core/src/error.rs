use thiserror::Error;

/// Errors raised across the crate.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular evaluation: target {target} coincides with source {source_index} and eps = {eps}")]
    Singular {
        target: usize,
        source_index: usize,
        eps: f64,
    },

    #[error("quadrature too coarse: {0}")]
    CoarseQuadrature(String),

    #[error("power iteration did not converge after {iterations} iterations (last relative gap {gap:e})")]
    NoConvergence { iterations: usize, gap: f64 },

    #[error("optimizer made no progress: {0}")]
    NoProgress(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {index} is {pivot})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("numerical divergence at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("did not converge: {0}")]
    NoConvergence(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

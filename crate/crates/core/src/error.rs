use thiserror::Error;

/// Errors produced by the robust estimation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The observation covariance `B Σ Bᵀ` is (numerically) singular, so the
    /// conditional mean is not defined.
    #[error(
        "singular observation covariance (det = {det:e}, min eigenvalue = {min_eigenvalue:e})"
    )]
    SingularModel { det: f64, min_eigenvalue: f64 },

    /// The linear objective handed to the oracle vanishes identically.
    #[error("degenerate gradient: linear objective is identically zero")]
    DegenerateGradient,

    #[error("no convergence: {0}")]
    NoConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

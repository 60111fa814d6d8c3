use thiserror::Error;

/// Errors produced by construction, evaluation and training routines.
#[derive(Error, Debug)]
pub enum SobolevError {
    /// Invalid density parameters (non-PD covariance, bad simplex weights, ...).
    #[error("invalid density: {0}")]
    InvalidDensity(String),

    /// Shape or dimension mismatch between inputs.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Operation not available for the given inputs (e.g. pdf of an
    /// empirical density, closed forms for a sampling-only measure).
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Iterative solver failed to converge.
    #[error("solver failure: {0}")]
    Solver(String),

    /// Ill-conditioned or otherwise numerically unusable problem.
    #[error("numerical problem: {0}")]
    Numerical(String),

    /// Bad run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Training diverged or produced non-finite values.
    #[error("training failure: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SobolevError>;

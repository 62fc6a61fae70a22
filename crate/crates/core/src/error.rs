use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("integer overflow: {0}")]
    Overflow(String),

    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("preconditioner is not symmetric; use flexible CG or force the method")]
    NonSymmetricPreconditioner,

    #[error("CG breakdown: non-positive curvature {0:e}")]
    Breakdown(f64),

    #[error("iteration diverged at step {iteration} (error ratio {ratio:e})")]
    Diverged { iteration: usize, ratio: f64 },

    #[error("{0}")]
    Config(String),

    #[error("subproblem solves failed for levels {0:?}")]
    Subproblems(Vec<(Vec<u32>, String)>),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

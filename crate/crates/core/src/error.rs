use thiserror::Error;

/// Errors raised by the discretization, the state solvers and the optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("level mismatch: expected n = {expected}, got n = {found}")]
    LevelMismatch { expected: usize, found: usize },

    #[error("invalid problem parameters: {0}")]
    InvalidParams(String),

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("nonlinear solve diverged: {0}")]
    NonlinearDivergence(String),

    #[error("incompatible divergence data: mean {mean:e} is not zero")]
    IncompatibleData { mean: f64 },

    #[error("operator is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("krylov breakdown: {0}")]
    Breakdown(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_level(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LevelMismatch { expected, found })
    }
}

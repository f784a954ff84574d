use thiserror::Error;

/// Errors raised by the flow engine, the baselines and the evaluation code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate ensemble: at least 2 particles required, got {0}")]
    DegenerateEnsemble(usize),

    #[error("negative log-likelihood is {value} at particle {index}")]
    NonFiniteLikelihood { index: usize, value: f64 },

    #[error("flow diverged at step {step} (max |alpha| = {max_alpha:e}): {reason}")]
    Divergence {
        step: usize,
        max_alpha: f64,
        reason: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("replicate {replicate} diverged on all {attempts} attempts; last: {last}")]
    RetriesExhausted {
        replicate: usize,
        attempts: usize,
        last: String,
    },

    #[error("quadrature did not converge: error estimate {achieved:e} above tolerance {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

use thiserror::Error;

/// Errors raised by the numerical core (model algebra, optimizers, problems).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("search direction has zero norm")]
    ZeroDirection,

    #[error("metric entry {index} must be strictly positive, got {value}")]
    NonPositiveMetric { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("lower-bound weights are degenerate (every step so far had zero length)")]
    DegenerateWeights,

    #[error("design matrix has numerical rank {rank} < {dim} for every seed tried")]
    RankDeficient { rank: usize, dim: usize },

    #[error("full-batch solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    SolverNonConvergence { iterations: usize, grad_norm: f64 },

    #[error("malformed problem file: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

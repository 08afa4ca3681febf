use thiserror::Error;

use crate::dynamics::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    /// Adaptive step halving went below the minimum step. The partial
    /// trajectory up to the failing step is attached.
    #[error("step size underflow ({step:e}) after {} steps", trajectory.steps())]
    StepUnderflow { step: f64, trajectory: Box<Trajectory> },

    /// More than the allowed fraction of batch instances failed.
    #[error("{skipped} of {total} instances failed, above the 10% limit")]
    TooManySkips { skipped: usize, total: usize },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

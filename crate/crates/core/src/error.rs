use thiserror::Error;

use crate::bootstrap::BootstrapReport;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input: dimensions, ranges, rank, missing columns.
    #[error("invalid input: {0}")]
    Input(String),

    /// A Newton solve failed to converge (separation, flat likelihood, exhausted line search).
    #[error("no convergence after {iterations} iterations: {reason}")]
    NonConvergence {
        iterations: usize,
        reason: String,
        last_beta: Vec<f64>,
    },

    /// An estimator could not be evaluated on the supplied propensities.
    #[error("degenerate estimation: {0}")]
    Degenerate(String),

    #[error("bootstrap unreliable: {n_fail} of {n_boot} resamples failed")]
    BootstrapUnreliable {
        n_fail: usize,
        n_boot: usize,
        partial: Box<BootstrapReport>,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("circuit graph is not connected")]
    Disconnected,

    #[error("no valid tree/cotree split: {0}")]
    InfeasiblePartition(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("scalar root-finder did not converge within {max_iter} iterations (last step {last_step:e})")]
    RootFinder { max_iter: usize, last_step: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("hybrid matrix is not reciprocal (signature violation {0:e})")]
    NotReciprocal(f64),

    #[error("operating point is infeasible: {0}")]
    InfeasibleOperatingPoint(String),

    #[error("training aborted in epoch {epoch}: {source}")]
    TrainingAborted {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

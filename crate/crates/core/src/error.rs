use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A non-finite entry appeared in the iterate produced at `iteration`.
    #[error("iterate diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error(
        "power iteration did not converge after {iterations} iterations \
         (estimate {estimate}, last relative change {relative_change:e})"
    )]
    NoConvergence {
        iterations: usize,
        estimate: f64,
        relative_change: f64,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training failed at stage {stage}, update {update}: {reason}")]
    Training {
        stage: usize,
        update: usize,
        reason: String,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

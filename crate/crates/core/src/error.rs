use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A covariance matrix that is not positive definite even after jitter.
    #[error("factorization failed: {0}")]
    Factorization(String),

    /// Iterative search ran out of budget. `best` holds the best iterate found.
    #[error("no convergence after {iterations} iterations: {detail}")]
    NonConvergence {
        iterations: usize,
        best: Vec<f64>,
        detail: String,
    },

    /// Design matrix columns that are linear combinations of earlier columns.
    #[error("rank-deficient design; aliased columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    /// Coefficient estimates diverging towards infinity.
    #[error("monotone likelihood: coefficient for `{column}` diverges ({value:.3e})")]
    MonotoneLikelihood { column: String, value: f64 },

    /// A tree that violates the structural invariants (single root, acyclic, ...).
    #[error("invalid tree `{tree}`: {reason}")]
    InvalidTree { tree: String, reason: String },

    /// Malformed input data.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// A state the algorithms guarantee cannot happen.
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GneError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GneError {
    /// Input outside the domain of an operation (dimension mismatch, bad size, bad step).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("graph is not connected: {0}")]
    Connectivity(String),

    /// A non-finite value appeared while iterating.
    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    /// Algorithm parameters do not satisfy the convergence hypotheses.
    #[error("certification failed: {message}")]
    Certification {
        message: String,
        /// Smallest admissible consensus gain, when the failure is due to `c`.
        min_c: Option<f64>,
    },

    #[error("reference oracle failed: {0}")]
    Oracle(String),
}

impl GneError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        GneError::Domain(msg.into())
    }

    pub(crate) fn numerical(iteration: usize, msg: impl Into<String>) -> Self {
        GneError::Numerical {
            iteration,
            message: msg.into(),
        }
    }
}

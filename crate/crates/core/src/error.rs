use std::path::PathBuf;

use thiserror::Error;

use crate::oracle::Capabilities;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid smoothness constants: {0}")]
    InvalidSmoothness(String),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("problem `{problem}` does not provide the {missing:?} oracle")]
    MissingCapability {
        problem: String,
        missing: Capabilities,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite {what} at iteration {iter}")]
    NonFinite { what: &'static str, iter: usize },

    #[error("max-oracle did not reach accuracy delta={delta:e} within {cap} inner steps")]
    InnerLoopCap { delta: f64, cap: usize },

    #[error("sample index {index} out of range for {len} data points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("Sinkhorn kernel underflow (epsilon={epsilon:e}); use the log-domain mode")]
    KernelUnderflow { epsilon: f64 },

    #[error("step sizes violate the one-step descent preconditions: {0}")]
    Precondition(String),

    #[error("cannot fit rate: {0}")]
    RateFit(String),

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: line {line}: {reason}")]
    Data {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}

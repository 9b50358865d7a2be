use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("clocks {i} and {j} are coincident; the pair interaction diverges")]
    CoincidentClocks { i: usize, j: usize },

    #[error("measurement rate {entry} must be strictly positive and finite, got {value}")]
    NonPositiveRate { entry: String, value: f64 },

    #[error("{n} clocks exceed the dense limit of {limit}; {hint}")]
    TooManyClocks {
        n: usize,
        limit: usize,
        hint: &'static str,
    },

    #[error("optimizer did not converge after {iterations} sweeps (best objective {best_objective:e})")]
    NonConvergence {
        iterations: usize,
        best_objective: f64,
        best_parameters: Vec<f64>,
    },

    #[error("scaling fit needs at least 4 points spanning 2 decades in N: {0}")]
    InsufficientSpan(String),

    #[error("coherence trace is not exponential (normalized log-fit residual {residual:e} > {threshold:e})")]
    NonExponential { residual: f64, threshold: f64 },

    #[error("density matrix lost positivity (min eigenvalue {min_eigenvalue:e}); reduce the step size")]
    PositivityViolated { min_eigenvalue: f64 },

    #[error("{path}: {message}")]
    Validation { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by a malformed scenario rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Context { source, .. } => source.is_validation(),
            other => matches!(other, Error::Validation { .. } | Error::Json(_)),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

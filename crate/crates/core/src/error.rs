use thiserror::Error;

/// Errors raised by the analysis library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid quantum operation: sum of E^dagger E has eigenvalue {:.6} > 1", 1.0 - .min_eigenvalue)]
    InvalidQuantumOperation { min_eigenvalue: f64 },

    #[error("operation requires a trace-preserving family (deficit norm {deficit_norm:.3e}); complete it first")]
    NotTracePreserving { deficit_norm: f64 },

    #[error("invalid probabilities: {0}")]
    InvalidProbabilities(String),

    #[error("state is not normalized (norm {0})")]
    NotNormalized(f64),

    #[error("matrix is not unitary (residual {0:.3e})")]
    NotUnitary(f64),

    #[error("mode unsupported: {0}")]
    ModeUnsupported(String),

    #[error("unsupported priors ({0}, {1}): only equal priors are supported")]
    UnsupportedPriors(f64, f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("bit {bit}: {source}")]
    Validation {
        bit: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

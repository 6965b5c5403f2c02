//! Error type shared across the crate.

/// Errors produced by any stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or parameter value.
    #[error("configuration error: {0}")]
    Config(String),

    /// Mismatched dimensions between inputs.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    /// Integration left the physically plausible region.
    #[error("state norm {norm:.3e} exceeds blow-up threshold {threshold:.3e} at step {step}")]
    BlowUp {
        norm: f64,
        threshold: f64,
        step: usize,
    },

    /// The ensemble-space analysis matrix has an eigenvalue negative beyond
    /// roundoff, so it is not a covariance.
    #[error(
        "analysis matrix eigenvalue {value:.3e} below roundoff floor {floor:.3e}; \
         ensemble covariance is not positive semi-definite"
    )]
    IndefiniteCovariance { value: f64, floor: f64 },

    /// Ridge normal equations were singular; regularize with beta > 0.
    #[error("ridge system is singular (beta = {beta:.3e}); use beta > 0")]
    SingularRidge { beta: f64 },

    /// Spectral-radius power iteration failed on every rebuild attempt.
    #[error("spectral radius estimation failed to converge after {attempts} reservoir builds")]
    SpectralRadius { attempts: usize },

    /// Too few data points for the requested operation.
    #[error("empty or too-short input: {0}")]
    Empty(&'static str),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

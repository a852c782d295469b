//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// Validation problems (bad configuration, shape mismatches, domain
/// violations) are distinguished from runtime failures (non-convergence,
/// numerical breakdown) so the CLI can map them to different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Vector or matrix dimensions do not agree.
    #[error("shape mismatch: expected dimension {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    /// Invalid configuration or constructor input.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Iterative fit did not reach the gradient tolerance.
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    /// Unpenalized logistic fit diverged on linearly separable data.
    #[error("separable data detected: coefficient norm {beta_norm:.3e} exceeds divergence bound; use lambda > 0")]
    Separable { beta_norm: f64 },

    /// A stochastic iterate became non-finite.
    #[error("learning rate error: {0}")]
    LearningRate(String),

    /// Embedding file ingestion failed.
    #[error("ingestion error at row {row}: {message}")]
    Ingest { row: usize, message: String },

    /// A matrix that must be inverted is singular or too ill-conditioned.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// The kernel window around the hinge level set holds too few points.
    #[error("insufficient kernel window: {count} points inside the bandwidth window, need at least {required}")]
    InsufficientWindow { count: usize, required: usize },

    /// A computed quantity overflowed or became non-finite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by invalid input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::ShapeMismatch { .. }
                | Error::Config(_)
                | Error::Domain(_)
                | Error::Ingest { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Shared error type for every numerical failure mode in the crate.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular matrix: pivot magnitude {pivot:.3e} below 1e-12 at column {col}")]
    Singular { col: usize, pivot: f64 },

    #[error("matrix not positive definite: Cholesky pivot {pivot:.3e} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix not symmetric: max asymmetry {max_asymmetry:.3e} exceeds {tolerance:.1e}")]
    NotSymmetric { max_asymmetry: f64, tolerance: f64 },

    #[error("zero variance in {0}")]
    ZeroVariance(String),

    #[error("degenerate range: min = max = {0} for {1}")]
    DegenerateRange(f64, String),

    #[error("non-finite evaluation of objective at perturbed point {0}")]
    NonFiniteEvaluation(usize),

    #[error("non-finite density on the evaluation grid")]
    NonFiniteDensity,

    #[error("reparameterization ill-conditioned: max |W W^-1 - I| = {max_deviation:.3e}")]
    IllConditioned { max_deviation: f64 },

    #[error("training aborted at iteration {iteration}: {cause}")]
    TrainingAborted { iteration: usize, cause: Box<Error> },

    #[error("mask policy {policy} needs K >= {min_k}, got K = {k}")]
    InvalidMaskPolicy {
        policy: &'static str,
        min_k: usize,
        k: usize,
    },

    #[error("empty latent set for composed denoising")]
    EmptyLatentSet,

    #[error("invalid probability mass function: {0}")]
    InvalidPmf(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

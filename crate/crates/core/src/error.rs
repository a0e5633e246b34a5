//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid HOI image: {reason} (worst slice {slice}, deviation {deviation:.3e})")]
    InvalidImage {
        reason: String,
        slice: usize,
        deviation: f64,
    },

    #[error("non-finite input in {0}")]
    NonFinite(String),

    #[error("invalid simplex: {0}")]
    InvalidSimplex(String),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("step {k} out of range (must lie in {lo}..={hi})")]
    StepOutOfRange { k: usize, lo: usize, hi: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite activation at {0} (model diverged)")]
    NonFiniteActivation(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch} step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty object group for object {0}")]
    EmptyGroup(u64),

    #[error("prediction/label alignment: {0}")]
    Alignment(String),

    #[error("invalid detector prior: {0}")]
    InvalidPrior(String),

    #[error("pair {0} not found")]
    MissingPair(u64),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

//! Error type shared by all workbench modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solution blow-up at step {step} (t = {t:.6}): max |u| = {norm:.3e}")]
    BlowUp { step: usize, t: f64, norm: f64 },

    #[error(
        "carleman weight overflow: 2*s*max(phi) = {exponent:.1} exceeds {limit}; \
         rescale s_C or lambda_C (max phi = {max_phi:.3e})"
    )]
    WeightOverflow {
        exponent: f64,
        limit: f64,
        max_phi: f64,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("iteration failed to make progress: {0}")]
    NoProgress(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

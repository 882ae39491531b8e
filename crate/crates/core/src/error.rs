use alloc::string::String;

/// Errors raised by the similarity and VAE primitives.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate matrix `{0}`: zero variation after centering")]
    Degenerate(String),
    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    Numerical { rows: usize, cols: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("metric excursion: {metric} value {value} outside its range beyond rounding")]
    OutOfRange { metric: &'static str, value: f64 },
    #[error("non-finite loss at step {step} (recon {recon}, penalty {penalty})")]
    NonFiniteLoss { step: u64, recon: f64, penalty: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

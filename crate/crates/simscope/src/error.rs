use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] simscope_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
    #[error("{0}")]
    Consistency(String),
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    /// Stable identifier for the error class, used in machine-readable output.
    pub fn kind(&self) -> &'static str {
        use simscope_core::Error as C;
        match self {
            Error::Core(e) => match e {
                C::InvalidInput(_) => "invalid_input",
                C::Shape(_) => "shape",
                C::Degenerate(_) => "degenerate",
                C::Numerical { .. } => "numerical",
                C::Contract(_) => "contract",
                C::Config(_) => "config",
                C::InsufficientData { .. } => "insufficient_data",
                C::OutOfRange { .. } => "out_of_range",
                C::NonFiniteLoss { .. } => "non_finite_loss",
            },
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Manifest { .. } => "manifest",
            Error::Consistency(_) => "consistency",
            Error::Config(_) => "config",
        }
    }

    /// One-line JSON object describing the error.
    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'a str,
            message: String,
        }
        serde_json::to_string(&Line { error: self.kind(), message: self.to_string() })
            .unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind()))
    }
}

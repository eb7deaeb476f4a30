use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("backend {backend} failed after {attempts} attempt(s): {message}")]
    Backend {
        backend: String,
        attempts: u32,
        message: String,
    },
    #[error("stage {0} produced empty output")]
    EmptyOutput(&'static str),
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("no anchor phrase found in the anchored chain")]
    NoAnchorProduced,
    #[error("template: {0}")]
    Template(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    InputFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Backend failures are retryable; everything else is a caller or data problem.
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

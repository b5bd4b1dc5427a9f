use thiserror::Error;

#[derive(Debug, Error)]
pub enum BelaError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad file format in {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("duplicate entity id: {0}")]
    DuplicateEntity(String),
    #[error("empty index")]
    EmptyIndex,
}

impl BelaError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        BelaError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        BelaError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, BelaError>;

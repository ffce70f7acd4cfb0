use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum TpcaError {
    /// Invalid input: shape mismatches, out-of-range indices, bad configuration.
    #[error("validation error: {0}")]
    Validation(String),

    /// A numerical operation failed (singular system, degenerate iterate, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// I/O failure with the offending path attached.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TpcaError {
    pub fn validation(msg: impl Into<String>) -> Self {
        TpcaError::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        TpcaError::Numerical(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        TpcaError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, TpcaError>;

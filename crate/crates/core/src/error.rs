use thiserror::Error;

/// Error type shared by all engine modules.
#[derive(Debug, Error)]
pub enum SnnError {
    /// Tensor extents do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid configuration value or inconsistent network description.
    #[error("config error: {0}")]
    Config(String),

    /// API contract violated by the caller (wrong label encoding, empty input, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Non-finite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Dataset ingest failure (malformed file, mismatched extents, duplicates).
    #[error("ingest error: {0}")]
    Ingest(String),

    /// CNN -> SNN weight transfer failure.
    #[error("transfer error: {0}")]
    Transfer(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SnnError>;

use thiserror::Error;

/// Errors surfaced by every public operation in this crate.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("matrix is not symmetric: {0}")]
    Symmetry(String),

    #[error("matrix is not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("rank out of range: {0}")]
    Rank(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("count error: {0}")]
    Count(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error in {file}: {message}")]
    Ingestion { file: String, message: String },

    #[error("model binding error: {0}")]
    Binding(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },

    #[error("document `{doc_id}`: {reason}")]
    InvalidDocument { doc_id: String, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },

    #[error("embedding file, line {line}: {message}")]
    EmbeddingFormat { line: usize, message: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("unknown document `{0}`")]
    UnknownDocument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

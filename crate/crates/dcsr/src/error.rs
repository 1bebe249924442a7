use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input text is empty or whitespace-only")]
    EmptyText,
    #[error("malformed JSON at line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: missing or invalid field `{field}`")]
    Schema { line: usize, field: String },
    #[error("vector dimension mismatch: {left} vs {right}")]
    Dimension { left: usize, right: usize },
    #[error("non-finite value encountered in {context}")]
    Numerical { context: String },
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("index file is corrupt or has an unsupported format: {0}")]
    IndexFormat(String),
    #[error("example has no BM25 negatives but the strategy requires them")]
    InsufficientNegatives,
    #[error("validation pool is empty")]
    EmptyPool,
    #[error("value out of range: {0}")]
    Range(String),
    #[error("invalid synthesis spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

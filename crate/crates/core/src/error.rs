use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error on line {line}: missing field `{field}`")]
    Schema { line: usize, field: String },

    #[error("format error on line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("index error: {id} out of range for table with {rows} rows")]
    Index { id: usize, rows: usize },

    #[error("lookup error: unknown {kind} `{id}`")]
    Lookup { kind: &'static str, id: String },

    #[error("split infeasible: {0}")]
    SplitInfeasible(String),

    #[error("finite-difference oracle: non-finite objective when probing tensor {tensor} coordinate {coord}")]
    Oracle { tensor: usize, coord: usize },

    #[error("divergence: non-finite value at batch {batch}")]
    Divergence { batch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("degenerate vector: norm {norm:e} is at or below {eps:e}")]
    DegenerateVector { norm: f64, eps: f64 },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("token id {token} out of vocabulary of size {vocab_size}")]
    Vocabulary { token: usize, vocab_size: usize },

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("gradient oracle invalid: {0}")]
    OracleInvalid(String),

    #[error("non-finite gradient in parameter {0:?}")]
    NumericFault(String),

    #[error("cannot compose batch: {0}")]
    BatchComposition(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("degenerate recipe: {0}")]
    DegenerateRecipe(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt payload: {0}")]
    Corruption(String),

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("invalid aggregation spec: {0}")]
    Spec(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("example index {index} out of range for {n_examples} examples")]
    Index { index: usize, n_examples: usize },

    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),

    #[error("unknown concept `{0}`")]
    UnknownConcept(String),

    #[error("frequency map is empty")]
    EmptyMap,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("PNG encoding failed: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a human-readable prefix (e.g. the layer it concerns).
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True when the failure came from the filesystem rather than the data.
    pub fn is_io(&self) -> bool {
        matches!(self.root(), Error::Io { .. } | Error::Png(_))
    }
}

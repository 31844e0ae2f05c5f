use thiserror::Error;

/// Unified error type for the toolkit.
///
/// Every failure mode carries enough context to print a single
/// machine-parseable line; the CLI prefixes it with `ERROR:`.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("empty support in {0}")]
    EmptySupport(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error at line {line}: {msg}")]
    Ingest { line: usize, msg: String },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("verification failure: {0}")]
    Verify(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

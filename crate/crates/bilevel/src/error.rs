use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("problem does not expose {0}")]
    MissingCapability(&'static str),
    #[error("ill-conditioned linear system: {0}")]
    Conditioning(String),
    #[error("solver diverged: non-finite iterate at step {step} of {solver}")]
    Divergence { solver: &'static str, step: usize },
    #[error("parameter regime violated: {0}")]
    Regime(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown verification suite `{0}`")]
    UnknownSuite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn regime(msg: impl Into<String>) -> Self {
        Error::Regime(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

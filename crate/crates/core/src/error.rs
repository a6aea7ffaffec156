use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("invalid convolution spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("config line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("op `{0}` has no registered backward")]
    NoBackward(String),

    #[error("gradient check failed for {op}: max relative error {error:.3e} > {threshold:.1e}")]
    GradCheckFailed {
        op: String,
        error: f64,
        threshold: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("malformed {format} data: {msg}")]
    Format { format: &'static str, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        msg: msg.into(),
    })
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

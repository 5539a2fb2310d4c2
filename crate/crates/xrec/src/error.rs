use thiserror::Error;

/// Errors produced by dataset handling, differentiation, training, and the
/// evaluation pipeline.
#[derive(Debug, Error)]
pub enum XrecError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown {kind} id: {id}")]
    UnknownId { kind: &'static str, id: String },

    #[error("node {node} ({op}): {msg}")]
    Shape { node: usize, op: &'static str, msg: String },

    #[error("gradient for `{param}` contains a non-finite value")]
    NonFiniteGradient { param: String },

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },

    #[error("{0}")]
    Invalid(String),
}

impl XrecError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        XrecError::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, XrecError>;

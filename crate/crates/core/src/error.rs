use std::path::PathBuf;

/// Failure kinds shared across the runtime.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("shape error: {0}")]
    Shape(String),

    #[error("codec error: {0}")]
    Codec(String),

    #[error("coefficient at symbol index {index} has value {value} outside the alphabet")]
    CoefficientRange { index: usize, value: i64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value encountered: {0}")]
    Numerics(String),

    #[error("invalid example: {0}")]
    Validation(String),

    #[error("unknown {kind} `{id}`; available: {available}")]
    Registry {
        kind: &'static str,
        id: String,
        available: String,
    },

    #[error("format error in {file}: {reason}")]
    Format { file: String, reason: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("mixture spec error: {0}")]
    Spec(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("transport error: {0}")]
    Transport(String),

    /// An error envelope returned by a policy server.
    #[error("server error {code}: {message}")]
    Remote { code: String, message: String },

    #[error("prediction failed: {0}")]
    Prediction(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn format(file: impl Into<String>, reason: impl ToString) -> Self {
        Error::Format {
            file: file.into(),
            reason: reason.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

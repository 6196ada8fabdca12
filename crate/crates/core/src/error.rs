use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A bundle failed validation; carries the sentence and the offending field.
    #[error("bundle {sentence_id}: invalid {field}: {message}")]
    Bundle {
        sentence_id: String,
        field: String,
        message: String,
    },

    #[error("{path}:{line}: {message}")]
    Dictionary {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown task map `{0}`")]
    UnknownTask(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero vector cannot be used in cosine similarity")]
    ZeroVector,

    #[error("no embedding for {0}")]
    MissingEmbedding(String),

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("evaluation input: {0}")]
    Eval(String),

    #[error("config: {0}")]
    Config(String),

    /// An output failed a post-condition the engine guarantees.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("malformed json in {context}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn bundle(
        sentence_id: impl Into<String>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Bundle {
            sentence_id: sentence_id.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    /// Errors caused by bad input data, as opposed to usage mistakes.
    pub fn is_data_error(&self) -> bool {
        !matches!(
            self,
            Error::Config(_) | Error::UnknownTask(_) | Error::Invariant(_)
        )
    }
}

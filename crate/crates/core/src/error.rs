use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed tokenizer data: {0}")]
    MalformedTokenizer(String),

    #[error("byte {0:#04x} has no single-byte token in the vocabulary")]
    UnrepresentableByte(u8),

    #[error("untokenizable span {span:?}")]
    UntokenizableSpan { span: String },

    #[error("enumeration cap of {cap} tokenizations exceeded ({reached} reached)")]
    CapExceeded { cap: usize, reached: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backend: {0}")]
    Backend(#[from] BackendError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Failures of a [`crate::lm::ScoringBackend`].
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),

    #[error("malformed response: {0}")]
    MalformedResponse(String),

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },

    #[error("empty candidate continuation")]
    EmptyCandidate,

    #[error("all candidates have zero probability")]
    ZeroMass,
}

impl Error {
    pub(crate) fn untokenizable(span: &[u8]) -> Self {
        Error::UntokenizableSpan {
            span: String::from_utf8_lossy(span).into_owned(),
        }
    }

    /// Short machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedTokenizer(_) => "malformed_tokenizer",
            Error::UnrepresentableByte(_) => "unrepresentable_byte",
            Error::UntokenizableSpan { .. } => "untokenizable_span",
            Error::CapExceeded { .. } => "cap_exceeded",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Backend(_) => "backend",
            Error::Json(_) => "json",
        }
    }
}

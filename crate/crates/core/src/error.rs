use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unknown sample id {id} for client {client}")]
    UnknownSample { client: usize, id: u64 },

    #[error("client index {client} out of range (m = {clients})")]
    UnknownClient { client: usize, clients: usize },

    #[error("non-finite model at round {round}: {detail}")]
    NonFinite { round: usize, detail: String },

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("i/o failure: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, FedError>;

impl FedError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        FedError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for FedError {
    fn from(e: std::io::Error) -> Self {
        FedError::Io(e.to_string())
    }
}

impl From<csv::Error> for FedError {
    fn from(e: csv::Error) -> Self {
        FedError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for FedError {
    fn from(e: serde_json::Error) -> Self {
        FedError::Io(e.to_string())
    }
}

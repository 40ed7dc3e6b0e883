use thiserror::Error;

use crate::obfuscate::{IntegrityFailure, ObfuscationError};
use crate::protocol::DecodeError;
use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Obfuscation(ObfuscationError),
    /// A returned product failed verification; the computation aborts.
    #[error("aborted: {0}")]
    Integrity(#[from] IntegrityFailure),
    #[error("protocol error: {0}")]
    Protocol(#[from] DecodeError),
    #[error("transport error: {0}")]
    Io(#[from] std::io::Error),
    #[error("worker {worker} reported error {code}: {text}")]
    Remote { worker: usize, code: u16, text: String },
    #[error("unexpected message from worker {worker}: {detail}")]
    Unexpected { worker: usize, detail: String },
    #[error("invalid network: {0}")]
    Network(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("invalid dataset: {0}")]
    Dataset(String),
}

impl From<ObfuscationError> for Error {
    fn from(e: ObfuscationError) -> Self {
        match e {
            ObfuscationError::Integrity(f) => Error::Integrity(f),
            ObfuscationError::Tensor(t) => Error::Tensor(t),
            other => Error::Obfuscation(other),
        }
    }
}

impl Error {
    pub fn is_integrity_failure(&self) -> bool {
        matches!(self, Error::Integrity(_))
    }
}

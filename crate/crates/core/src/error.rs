use std::io;

use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension { op: &'static str, left: Vec<usize>, right: Vec<usize> },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("cross-entropy mean is undefined: every position is ignored")]
    UndefinedMean,

    #[error("byte {byte:#04x} at position {position} is outside the vocabulary alphabet")]
    Encoding { byte: u8, position: usize },

    #[error("token id {id} is outside the vocabulary (size {size})")]
    Decoding { id: u32, size: usize },

    #[error("prompt is empty")]
    EmptyPrompt,

    #[error("sequence length {len} exceeds the model limit {max}")]
    Length { len: usize, max: usize },

    #[error("prompt alignment failed: {0}; use the llm_shared tokenizer mode")]
    Alignment(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("task generation: {0}")]
    Generation(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

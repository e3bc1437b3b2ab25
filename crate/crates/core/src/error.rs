use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("index {id} out of range for table of {bound} rows")]
    Index { id: usize, bound: usize },

    #[error("empty sequence: {0}")]
    EmptySequence(&'static str),

    #[error("loss function is not deterministic: {first} != {second}")]
    Determinism { first: f64, second: f64 },

    #[error("distribution is not normalized (sum = {sum})")]
    Normalization { sum: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("parse error on line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("training diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt checkpoint at byte {offset}: {detail}")]
    Corruption { offset: u64, detail: String },

    #[error("undefined: {0}")]
    Undefined(&'static str),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn dims(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

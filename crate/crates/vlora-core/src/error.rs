//! Error type shared across the crate.

use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("tensor rank {rank} exceeds the supported maximum of 4")]
    RankTooLarge { rank: usize },
    #[error("zero-sized extent in shape {shape}")]
    EmptyExtent { shape: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("softmax row {row} has no unmasked entries")]
    AllMasked { row: usize },
    #[error("backward requires a scalar loss, got shape {shape}")]
    NotScalar { shape: String },
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("sequence of length {len} exceeds max_seq {max_seq}")]
    SequenceTooLong { len: usize, max_seq: usize },
    #[error("cell symbol {symbol} outside alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: usize, alphabet: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training step {step} failed: {source}")]
    TrainStep {
        step: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        Error::ShapeMismatch { op, detail }
    }
}

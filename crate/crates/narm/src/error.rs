use std::io;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("corpus is empty after filtering")]
    EmptyCorpus,
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("unknown item id: {0}")]
    UnknownItem(String),
    #[error("item index {0} out of range 1..={1}")]
    IndexOutOfRange(u32, usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("non-finite gradient in parameter block {0}")]
    NonFiniteGradient(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

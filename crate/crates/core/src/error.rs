use thiserror::Error;

use crate::graph::Modality;

/// Errors produced by the detection engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("empty embedding source")]
    EmptyEmbeddingSource,

    #[error("missing {modality} embedding for `{id}` and no source text to derive it from")]
    MissingVector { id: String, modality: Modality },

    #[error("dimension mismatch for {modality}: expected {expected}, got {actual}")]
    DimensionMismatch {
        modality: Modality,
        expected: usize,
        actual: usize,
    },

    #[error("modality mismatch: {left} vs {right}")]
    ModalityMismatch { left: Modality, right: Modality },

    #[error("degenerate embedding")]
    DegenerateEmbedding,

    #[error("empty node set")]
    EmptyNodeSet,

    #[error("insufficient reference: need at least 2 clean members, got {0}")]
    InsufficientReference(usize),

    #[error("timestep regression: frame {frame} does not advance past {last}")]
    TimestepRegression { frame: u32, last: u32 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("malformed frame: {0}")]
    Format(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("evaluation input mismatch: {0}")]
    EvalMismatch(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("internal: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

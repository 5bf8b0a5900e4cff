use alloc::string::String;

use crate::payload::PayloadError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid cardinality {0}")]
    InvalidCardinality(usize),
    #[error("negative mass {value} at category {index}")]
    NegativeMass { index: usize, value: f64 },
    #[error("distribution has zero total mass")]
    EmptyDistribution,
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("invalid question: {0}")]
    InvalidQuestion(String),
    #[error("invalid prompt variant: {0}")]
    InvalidVariant(String),
    #[error("cannot parse permutation key {0:?}")]
    KeyParse(String),
    #[error("respondent {respondent}: category {category} outside 1..={cardinality} for question {question}")]
    CategoryOutOfRange {
        respondent: String,
        question: String,
        category: u32,
        cardinality: usize,
    },
    #[error("no successful responses for {0}")]
    MissingDistribution(String),
    #[error(transparent)]
    Payload(#[from] PayloadError),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("missing embedding for question {0}")]
    MissingEmbedding(String),
    #[error("embedding has {got} dimensions, need at least {need}")]
    EmbeddingTooShort { need: usize, got: usize },
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("column mismatch: model expects {expected} columns, got {got}")]
    ColumnMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

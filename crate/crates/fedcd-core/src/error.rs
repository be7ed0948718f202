//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("batch is empty")]
    EmptyBatch,

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid archetype: {0}")]
    InvalidArchetype(String),

    #[error("label {label} pool exhausted: requested {requested}, pool holds {available}")]
    PoolExhausted {
        label: usize,
        requested: usize,
        available: usize,
    },

    #[error("device {device} {split} split is empty; adjust samples or fractions")]
    EmptyShardSplit { device: usize, split: &'static str },

    #[error("device {0} has no alive models")]
    NoAliveModels(usize),

    #[error("all rounds already executed")]
    RoundsExhausted,

    #[error("performance series too short (need at least 2 rounds)")]
    SeriesTooShort,

    #[error("dataset line {line}: {reason}")]
    DatasetParse { line: usize, reason: String },

    #[error("metrics csv line {line}: {reason}")]
    MetricsParse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

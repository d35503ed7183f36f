use std::io;

use thiserror::Error;

/// Errors produced by the fingerprinting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus is empty")]
    CorpusEmpty,
    #[error("token id {id} is out of range for a vocabulary of {vocab_size}")]
    InvalidTokenId { id: u32, vocab_size: usize },
    #[error("prefix is empty")]
    EmptyPrefix,
    #[error("prefix has {len} tokens but the model accepts at most {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("training sequence has {len} tokens, at least 2 are required")]
    SequenceTooShort { len: usize },
    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("requested {requested} neurons but only {available} are eligible")]
    SelectionTooLarge { requested: usize, available: usize },
    #[error("neuron selection does not fit the model configuration: {0}")]
    SelectionConfigMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate pair id {0}")]
    DuplicateRecord(u64),
    #[error("selection hash {got} does not match index selection hash {expected}")]
    SelectionHashMismatch { expected: u64, got: u64 },
    #[error("index has no clustering metadata")]
    NotClustered,
    #[error("training line set is empty")]
    EmptyTrainingSet,
    #[error("no recitation cases to evaluate")]
    EmptyCaseSet,
    #[error("need at least {min_warmup} warmup and {min_iters} timed iterations, got {warmup} and {iters}")]
    InsufficientSamples {
        warmup: usize,
        iters: usize,
        min_warmup: usize,
        min_iters: usize,
    },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },
    #[error("target {target} out of range for {classes} classes at row {row}")]
    TargetOutOfRange { row: usize, target: usize, classes: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("loss function is not deterministic: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("empty input")]
    EmptyInput,
    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("character {ch:?} at position {position} is not in the vocabulary")]
    UnknownCharacter { ch: char, position: usize },
    #[error("byte {byte:#04x} at position {position} is not in the vocabulary")]
    UnknownByte { byte: u8, position: usize },
    #[error("need at least {needed} tokens to batchify, got {got}")]
    TooFewTokens { needed: usize, got: usize },

    #[error("model: {0}")]
    Model(String),
    #[error("PDR head is absent (inference checkpoint)")]
    HeadAbsent,
    #[error("vocabulary mismatch: model has {model} tokens, data uses {data}")]
    VocabMismatch { model: usize, data: usize },

    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("non-finite training loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("unknown ablation arm {0:?}")]
    UnknownArm(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::InvalidTensor(_) => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::TargetOutOfRange { .. } => "target_range",
            Error::NonScalarRoot(_) => "non_scalar_root",
            Error::NonDeterministic { .. } => "non_deterministic",
            Error::EmptyInput => "empty_input",
            Error::InvalidUtf8 { .. } => "invalid_utf8",
            Error::UnknownCharacter { .. } | Error::UnknownByte { .. } => "unknown_token",
            Error::TooFewTokens { .. } => "too_few_tokens",
            Error::Model(_) => "model",
            Error::HeadAbsent => "head_absent",
            Error::VocabMismatch { .. } => "vocab_mismatch",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Checksum => "checksum",
            Error::Version { .. } => "version",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::UnknownArm(_) => "unknown_arm",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

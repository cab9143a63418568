use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("no agreed dialogues for scenario {0}")]
    NoAgreementData(String),

    #[error("catalog is empty")]
    EmptyCatalog,

    #[error("no legal action in mask")]
    EmptyMask,

    #[error("illegal action {action} in phase {phase}")]
    IllegalAction { action: String, phase: String },

    #[error("{0} does not hold the turn")]
    WrongActor(String),

    #[error("utterance has a price slot but no price was set")]
    MissingPrice,

    #[error("price adjuster invoked for action {0}")]
    RatioNotInvoked(String),

    #[error("backward called on an output that does not depend on any trainable parameter")]
    Disconnected,

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("unknown parameter {0}")]
    UnknownParameter(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("missing prerequisite: {0}")]
    Prerequisite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

use thiserror::Error;

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown scenario {0}")]
    UnknownScenario(String),

    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("session {0} has not ended")]
    NotTerminal(String),

    #[error("invalid rating: {0}")]
    InvalidRating(String),

    #[error("session log line {line}: {message}")]
    Log { line: usize, message: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] pricenego::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

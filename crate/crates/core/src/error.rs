use thiserror::Error;

/// Errors surfaced by engine operations.
///
/// Operator failures inside a running pipeline never reach the `explore`
/// caller; they degrade to passthrough. These variants show up at
/// registration time, on direct operator calls, and on the admin surface.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Internal state does not permit the operation (e.g. zero rounds with
    /// every arm already pulled).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Target or transformer chain failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// An injected scorer failed or returned a non-finite value.
    #[error("scorer error: {0}")]
    Scorer(String),

    /// Named target, fetcher or file does not exist.
    #[error("not found: {0}")]
    NotFound(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::InvalidState(_) => "InvalidState",
            Error::Config(_) => "ConfigError",
            Error::Scorer(_) => "ScorerError",
            Error::NotFound(_) => "NotFound",
            Error::Io(_) => "IoError",
            Error::Serde(_) => "SerdeError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

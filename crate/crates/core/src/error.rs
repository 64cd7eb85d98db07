use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied something outside an operation's domain.
    #[error("invalid input: {0}")]
    Input(String),
    /// Operation is not valid in the current state (e.g. empty buffer).
    #[error("invalid state: {0}")]
    State(String),
    /// Preference oracle failed to answer.
    #[error("oracle failure: {0}")]
    Oracle(String),
    /// Experiment was aborted at a given round.
    #[error("round {round}: {source}")]
    Round {
        round: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

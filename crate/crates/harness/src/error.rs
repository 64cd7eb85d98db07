use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("oracle connection: {0}")]
    OracleConnection(String),
    #[error("log schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u32 },
    #[error("log format: {0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] duel_align::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::OracleConnection(_) => 3,
            HarnessError::Core(e) => match root_cause(e) {
                duel_align::Error::Input(_) => 2,
                duel_align::Error::Oracle(_) => 3,
                _ => 1,
            },
            _ => 1,
        }
    }
}

fn root_cause(e: &duel_align::Error) -> &duel_align::Error {
    match e {
        duel_align::Error::Round { source, .. } => root_cause(source),
        other => other,
    }
}

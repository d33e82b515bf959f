use hypergen_episode::EpisodeError;
use hypergen_model::ModelError;
use hypergen_oracles::OracleError;
use hypergen_train::TrainError;
use thiserror::Error;

/// Process exit codes: 0 success, 2 configuration, 3 numeric, 4 I/O.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("numeric: {0}")]
    Numeric(String),

    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn config(detail: impl Into<String>) -> Self {
        CliError::Config(detail.into())
    }

    pub fn io(detail: impl Into<String>) -> Self {
        CliError::Io(detail.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<EpisodeError> for CliError {
    fn from(e: EpisodeError) -> Self {
        match e {
            EpisodeError::Io(io) => CliError::Io(io.to_string()),
            EpisodeError::Image { .. } => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(d) => CliError::Config(d),
            // Covers both unreadable files and malformed containers.
            ModelError::Checkpoint(d) => CliError::Io(d),
            ModelError::Tensor(t) => CliError::Numeric(t.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(d) => CliError::Config(d),
            TrainError::Model(m) => m.into(),
            TrainError::Episode(ep) => ep.into(),
            TrainError::Numeric(d) => CliError::Numeric(d),
            TrainError::Io { .. } => CliError::Io(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Invalid(d) => CliError::Config(d),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

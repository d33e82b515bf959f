use hypergen_episode::EpisodeError;
use hypergen_model::ModelError;
use hypergen_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train config: {0}")]
    Config(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Episode(#[from] EpisodeError),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl TrainError {
    pub fn config(detail: impl Into<String>) -> Self {
        TrainError::Config(detail.into())
    }

    pub(crate) fn io(path: impl std::fmt::Display, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.to_string(),
            source,
        }
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::from(e))
    }
}

use hypergen_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl ModelError {
    pub fn config(detail: impl Into<String>) -> Self {
        ModelError::Config(detail.into())
    }

    pub fn checkpoint(detail: impl Into<String>) -> Self {
        ModelError::Checkpoint(detail.into())
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("dataset: {0}")]
    Dataset(String),

    #[error("class {class}: {detail}")]
    Class { class: String, detail: String },

    #[error("episode request invalid: {0}")]
    Request(String),

    #[error("uri: {0}")]
    Uri(String),

    #[error("image {path}: {detail}")]
    Image { path: String, detail: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(String),
}

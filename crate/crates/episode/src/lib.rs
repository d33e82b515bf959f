//! Dataset ingestion, augmentation, and deterministic sampling of supervised
//! and semi-supervised n-way-k-shot episodes.
//!
//! A [`DatasetIndex`] is an immutable view of one split (train/val/test) of a
//! dataset: per-class sample sources, augmentation policy, and normalization
//! statistics. Episode sampling is a pure function of (index, episode shape,
//! seed), so the full episode stream of a run is reproducible from its config.

mod augment;
mod error;
mod export;
mod image_buf;
mod index;
mod sample;
mod synth;
mod uri;

pub use augment::{augment, AugmentationSpec};
pub use error::EpisodeError;
pub use export::export_episodes;
pub use image_buf::ImageBuf;
pub use index::{load_dataset, ClassRecord, ClassSource, DatasetIndex, Split, SplitConfig};
pub use sample::{
    mask_unlabeled, sample_episode, unlabeled_keep_probability, Episode, QuerySample,
    SupportSample,
};
pub use synth::synth_glyphs;
pub use uri::{count_classes, dataset_from_uri};

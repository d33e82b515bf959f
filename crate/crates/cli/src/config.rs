use std::path::{Path, PathBuf};

use hypergen_episode::{AugmentationSpec, DatasetIndex, Split, SplitConfig};
use hypergen_model::{CnnSpec, GeneratorConfig, TransformerConfig, WeightAllocation, WeightSource};
use hypergen_train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Class counts per split (applied to the dataset's sorted class list) plus
/// the augmentation policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub augment: AugmentationSpec,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 12,
            val: 0,
            test: 8,
            augment: AugmentationSpec::off(),
        }
    }
}

/// Generator architecture and the shape of the CNN it emits. The CNN input
/// shape comes from the dataset and its class count from the episode shape,
/// so neither is configured here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub d_label: usize,
    pub use_image_embedding: bool,
    pub allocation: WeightAllocation,
    pub channels: usize,
    pub depth: usize,
    pub body: WeightSource,
    pub logits: WeightSource,
    // Tables must follow plain values in TOML, so this field stays last.
    pub transformer: TransformerConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            d_label: 32,
            use_image_embedding: true,
            allocation: WeightAllocation::Output,
            channels: 8,
            depth: 4,
            body: WeightSource::Generated,
            logits: WeightSource::Generated,
            transformer: TransformerConfig::default(),
        }
    }
}

/// One training run, fully described: dataset address, split carve, model
/// architecture, and optimization settings. Unknown keys anywhere in the
/// file are rejected, and serializing a parsed config reproduces the
/// serialized form byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: String,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("{}: {}", path.display(), e)))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e)))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::config(e.to_string()))
    }

    /// Samples drawn per class in any one episode of this run.
    pub fn min_samples(&self) -> usize {
        self.train.k_shot + self.train.q_query + self.train.u_unlabeled
    }

    pub fn split_config(&self, take: Split) -> SplitConfig {
        SplitConfig {
            train: self.split.train,
            val: self.split.val,
            test: self.split.test,
            take,
            augment: self.split.augment,
            min_samples: self.min_samples(),
        }
    }

    /// The split evaluation episodes draw from: val when present, else test.
    pub fn eval_split(&self) -> Result<Split, CliError> {
        if self.split.val > 0 {
            Ok(Split::Val)
        } else if self.split.test > 0 {
            Ok(Split::Test)
        } else {
            Err(CliError::config(
                "evaluation needs a val or test split with at least one class",
            ))
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            n_way: self.train.n_way,
            d_label: self.model.d_label,
            use_image_embedding: self.model.use_image_embedding,
            allocation: self.model.allocation,
            transformer: self.model.transformer.clone(),
        }
    }

    pub fn cnn_spec(&self, index: &DatasetIndex) -> CnnSpec {
        let (h, w, c) = index.image_shape;
        CnnSpec::standard(
            self.model.channels,
            self.model.depth,
            self.train.n_way,
            [c, h, w],
            self.model.body,
            self.model.logits,
        )
    }
}

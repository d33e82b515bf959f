//! A Transformer that writes the weights of a small CNN from a few labeled
//! (and optionally unlabeled) examples.
//!
//! The support set of an episode is encoded as one token per sample: a label
//! embedding, a shared image embedding, and a per-layer activation embedding,
//! concatenated. Learnable placeholder tokens are appended, one per weight
//! slice, and a Transformer maps the token list to output tokens whose
//! placeholder rows are read back as convolution kernels, logits weights, and
//! biases. Layers are generated in network order, each conditioned on the
//! activations the previous generated layers produce, so the whole pass and
//! the query loss behind it differentiate into every generator parameter.
//!
//! [`Generator`] owns the full parameter set; [`episode_loss`] is the single
//! entry point a training loop needs. Batch normalization in the target CNN
//! and the embedders always uses support-batch statistics, which keeps every
//! episode self-contained and the pass permutation invariant.

mod checkpoint;
mod cnn;
mod embed;
mod error;
mod export;
mod generator;
mod params;
mod tokens;
mod transformer;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use cnn::{
    accuracy, cnn_forward, oracle_train, stack_images, BnSource, BnWeights, CnnForward, CnnParams,
    CnnSpec, GeneratedWeights, LayerKind, LayerSpec, LayerWeights, OracleOutcome, PadMode,
    WeightSource, BN_EPS, BN_MOMENTUM,
};
pub use embed::{ActivationEmbedder, ImageEmbedder};
pub use error::ModelError;
pub use export::{export_attention_maps, write_npy};
pub use generator::{
    decode_weights, episode_forward, episode_loss, slice_rows, Generation, Generator,
    GeneratorConfig, LayerAttention, SliceGeometry, WeightAllocation,
};
pub use params::{he_init, normal_init, Bound, ParamId, ParamSet};
pub use tokens::{encode_tokens, LabelCodebook, TokenLayout, TokenRole};
pub use transformer::{
    AttentionKind, AttentionMap, TransformerConfig, TransformerParams, TransformerVariant,
};

//! The weight generator: per-layer tokenization, a per-layer Transformer,
//! and weight slice decoding, composed layer by layer over the partially
//! built CNN.
//!
//! Layers are generated in network order. Before generating layer l, the
//! support set is pushed through layers 1..l using the weights produced so
//! far, so each layer's tokens see the activations its own inputs will
//! actually carry. Everything happens on one tape: a query loss computed
//! through the generated CNN differentiates into every generator parameter.

use std::path::Path;

use hypergen_tensor::{Real, Tape, Tensor, Tid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::cnn::{
    cnn_forward, conv_layer_forward, stack_images, BnSource, BnWeights, CnnForward, CnnParams,
    CnnSpec, GeneratedWeights, LayerBn, LayerKind, LayerWeights, WeightSource,
};
use crate::embed::{ActivationEmbedder, ImageEmbedder};
use crate::error::ModelError;
use crate::params::{normal_init, Bound, ParamId, ParamSet};
use crate::tokens::{encode_tokens, LabelCodebook, TokenLayout};
use crate::transformer::{AttentionMap, TransformerConfig, TransformerParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightAllocation {
    /// One slice per output channel: kernel taps for that channel plus its
    /// bias as a trailing element.
    Output,
    /// One slice per spatial tap holding a full [n_in, n_out] matrix, plus a
    /// dedicated slice carrying all biases.
    Spatial,
}

/// Slice geometry of one generated layer under an allocation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceGeometry {
    pub kernel: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub n_slices: usize,
    pub slice_len: usize,
}

impl SliceGeometry {
    pub fn new(mode: WeightAllocation, kernel: usize, n_in: usize, n_out: usize) -> SliceGeometry {
        let (n_slices, slice_len) = match mode {
            WeightAllocation::Output => (n_out, kernel * kernel * n_in + 1),
            WeightAllocation::Spatial => (kernel * kernel + 1, n_in * n_out),
        };
        SliceGeometry {
            kernel,
            n_in,
            n_out,
            n_slices,
            slice_len,
        }
    }
}

/// Reads weight slices out of transformer output tokens. Slices occupy the
/// first `slice_len` columns of each placeholder row; sample-token outputs
/// are ignored. Returns (kernel, bias): conv kernels as [k,k,n_in,n_out],
/// logits weights as [n_in, n_out].
pub fn decode_weights<S: Real>(
    tape: &mut Tape<S>,
    output: Tid,
    layout: &TokenLayout,
    mode: WeightAllocation,
    geom: &SliceGeometry,
    kind: LayerKind,
) -> Result<(Tid, Tid), ModelError> {
    let shape = tape.shape(output).to_vec();
    if shape.len() != 2 || shape[0] != layout.n_tokens() || shape[1] != layout.width {
        return Err(ModelError::config(format!(
            "output tokens {:?} do not match layout ({} x {})",
            shape,
            layout.n_tokens(),
            layout.width
        )));
    }
    if layout.n_placeholders != geom.n_slices || layout.width < geom.slice_len {
        return Err(ModelError::config(format!(
            "layout has {} placeholders of width {}, geometry wants {} slices of {}",
            layout.n_placeholders, layout.width, geom.n_slices, geom.slice_len
        )));
    }
    let rows = tape.slice_axis(output, 0, layout.placeholder_offset(), geom.n_slices)?;
    let payload = tape.slice_axis(rows, 1, 0, geom.slice_len)?;
    let (k, n_in, n_out) = (geom.kernel, geom.n_in, geom.n_out);
    match mode {
        WeightAllocation::Output => {
            let taps = tape.slice_axis(payload, 1, 0, geom.slice_len - 1)?;
            let bias_col = tape.slice_axis(payload, 1, geom.slice_len - 1, 1)?;
            let bias = tape.reshape(bias_col, vec![n_out])?;
            let kernel_t = tape.transpose2d(taps)?;
            let kernel = match kind {
                LayerKind::Conv => tape.reshape(kernel_t, vec![k, k, n_in, n_out])?,
                LayerKind::Logits => kernel_t,
            };
            Ok((kernel, bias))
        }
        WeightAllocation::Spatial => {
            let taps = tape.slice_axis(payload, 0, 0, k * k)?;
            let kernel = match kind {
                LayerKind::Conv => tape.reshape(taps, vec![k, k, n_in, n_out])?,
                LayerKind::Logits => tape.reshape(taps, vec![n_in, n_out])?,
            };
            let bias_row = tape.slice_axis(payload, 0, k * k, 1)?;
            let bias_cols = tape.slice_axis(bias_row, 1, 0, n_out)?;
            let bias = tape.reshape(bias_cols, vec![n_out])?;
            Ok((kernel, bias))
        }
    }
}

/// Reference slice encoding of explicit weight tensors: the exact inverse of
/// [`decode_weights`], used by round-trip tests and closed-form cross-checks.
/// Accepts [k,k,n_in,n_out] conv kernels or [n_in,n_out] logits matrices.
pub fn slice_rows<S: Real>(
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
    mode: WeightAllocation,
) -> Result<Tensor<S>, ModelError> {
    let (k, n_in, n_out) = match kernel.shape() {
        &[k, k2, n_in, n_out] if k == k2 => (k, n_in, n_out),
        &[n_in, n_out] => (1, n_in, n_out),
        s => {
            return Err(ModelError::config(format!(
                "weight tensor {:?} is neither a conv kernel nor a logits matrix",
                s
            )))
        }
    };
    if bias.shape() != [n_out] {
        return Err(ModelError::config(format!(
            "bias {:?} for {} output channels",
            bias.shape(),
            n_out
        )));
    }
    let geom = SliceGeometry::new(mode, k, n_in, n_out);
    let mut rows = Tensor::zeros(vec![geom.n_slices, geom.slice_len]);
    let kd = kernel.data();
    match mode {
        WeightAllocation::Output => {
            // Row o: kernel taps in [k,k,n_in] row-major order, then the bias.
            for o in 0..n_out {
                for t in 0..k * k * n_in {
                    *rows.at_mut(&[o, t]) = kd[t * n_out + o];
                }
                *rows.at_mut(&[o, geom.slice_len - 1]) = bias.data()[o];
            }
        }
        WeightAllocation::Spatial => {
            for t in 0..k * k {
                for e in 0..n_in * n_out {
                    *rows.at_mut(&[t, e]) = kd[t * n_in * n_out + e];
                }
            }
            for o in 0..n_out {
                *rows.at_mut(&[k * k, o]) = bias.data()[o];
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_way: usize,
    /// Dimension of label and placeholder embeddings.
    pub d_label: usize,
    /// Include the shared image embedding in sample tokens.
    pub use_image_embedding: bool,
    pub allocation: WeightAllocation,
    pub transformer: TransformerConfig,
}

impl GeneratorConfig {
    pub fn new(n_way: usize) -> GeneratorConfig {
        GeneratorConfig {
            n_way,
            d_label: 32,
            use_image_embedding: true,
            allocation: WeightAllocation::Output,
            transformer: TransformerConfig::default(),
        }
    }

    pub fn validate(&self, spec: &CnnSpec) -> Result<(), ModelError> {
        spec.validate()?;
        self.transformer.validate()?;
        if self.n_way == 0 || self.d_label == 0 {
            return Err(ModelError::config("n_way and d_label must be positive"));
        }
        if spec.n_classes != self.n_way {
            return Err(ModelError::config(format!(
                "{}-way generator for a {}-class CNN",
                self.n_way, spec.n_classes
            )));
        }
        if spec.any_generated() {
            let mut conv_channels = spec
                .layers
                .iter()
                .filter(|l| l.kind == LayerKind::Conv)
                .map(|l| l.channels);
            let Some(first) = conv_channels.next() else {
                return Err(ModelError::config("generated spec has no conv body"));
            };
            // The activation embedding width equals the body channel count,
            // which only makes sense when the body is uniform.
            if conv_channels.any(|c| c != first) {
                return Err(ModelError::config(
                    "generated bodies use a uniform conv channel count",
                ));
            }
            if first < 2 {
                return Err(ModelError::config(
                    "generated bodies need at least 2 channels",
                ));
            }
        }
        Ok(())
    }
}

struct GenLayer {
    act: ActivationEmbedder,
    mu: ParamId,
    transformer: TransformerParams,
    geom: SliceGeometry,
    width: usize,
}

/// The full weight generator: embedders, codebook, per-layer transformers,
/// and the learned portion of the target CNN, all in one parameter set.
pub struct Generator<S: Real> {
    pub config: GeneratorConfig,
    pub spec: CnnSpec,
    pub params: ParamSet<S>,
    codebook: LabelCodebook,
    image: Option<ImageEmbedder>,
    cnn: CnnParams,
    layers: Vec<Option<GenLayer>>,
}

/// Attention retained from one generated layer's transformer.
pub struct LayerAttention<S: Real> {
    pub cnn_layer: usize,
    pub layout: TokenLayout,
    pub maps: Vec<AttentionMap<S>>,
}

/// One full generation pass over an episode's support set.
pub struct Generation<S: Real> {
    pub weights: GeneratedWeights,
    /// Support-batch normalization statistics, reusable for the query pass.
    pub bn_stats: Vec<Option<(Tid, Tid)>>,
    /// Per generated layer token layouts, indexed by CNN layer.
    pub layouts: Vec<Option<TokenLayout>>,
    /// Retained attention maps; empty unless requested.
    pub attention: Vec<LayerAttention<S>>,
}

impl<S: Real> Generator<S> {
    /// Builds a generator with freshly initialized parameters. Construction
    /// order is fixed, so a seed pins every initial value.
    pub fn new(config: GeneratorConfig, spec: CnnSpec, seed: u64) -> Result<Generator<S>, ModelError> {
        config.validate(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let codebook = LabelCodebook::init(config.n_way, config.d_label, &mut params, &mut rng);
        let image = config
            .use_image_embedding
            .then(|| ImageEmbedder::init(spec.input_shape[0], &mut params, &mut rng));
        let cnn = CnnParams::init(&spec, "cnn", &mut params, &mut rng)?;
        let act_dim = spec
            .layers
            .iter()
            .find(|l| l.kind == LayerKind::Conv)
            .map(|l| l.channels)
            .unwrap_or(0);
        let sample_dim = config.d_label
            + if config.use_image_embedding {
                ImageEmbedder::DIM
            } else {
                0
            }
            + act_dim;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            if l.source != WeightSource::Generated {
                layers.push(None);
                continue;
            }
            let prefix = format!("gen{}", i);
            let act = ActivationEmbedder::init(
                spec.in_channels(i),
                act_dim,
                &prefix,
                &mut params,
                &mut rng,
            )?;
            let geom = SliceGeometry::new(
                config.allocation,
                match l.kind {
                    LayerKind::Conv => l.kernel,
                    LayerKind::Logits => 1,
                },
                spec.in_channels(i),
                l.channels,
            );
            let width = sample_dim.max(geom.slice_len);
            let mu = params.add(
                format!("{}.mu", prefix),
                normal_init(
                    &mut rng,
                    vec![geom.n_slices, config.d_label],
                    (1.0 / config.d_label as f64).sqrt(),
                ),
            );
            let transformer = TransformerParams::init(
                &config.transformer,
                width,
                &prefix,
                &mut params,
                &mut rng,
            )?;
            layers.push(Some(GenLayer {
                act,
                mu,
                transformer,
                geom,
                width,
            }));
        }
        Ok(Generator {
            config,
            spec,
            params,
            codebook,
            image,
            cnn,
            layers,
        })
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Bound {
        self.params.bind(tape)
    }

    pub fn bind_frozen(&self, tape: &mut Tape<S>) -> Bound {
        self.params.bind_frozen(tape)
    }

    /// Generates the full weight table for one episode's support set.
    /// `labels[i] = None` marks sample i as unlabeled.
    pub fn generate(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        support_images: &[Tensor<S>],
        labels: &[Option<usize>],
        retain_attention: bool,
    ) -> Result<Generation<S>, ModelError> {
        if support_images.len() != labels.len() {
            return Err(ModelError::config(format!(
                "{} images for {} labels",
                support_images.len(),
                labels.len()
            )));
        }
        for img in support_images {
            if img.shape() != self.spec.input_shape.as_slice() {
                return Err(ModelError::config(format!(
                    "support image {:?}, spec wants {:?}",
                    img.shape(),
                    self.spec.input_shape
                )));
            }
        }
        let images = stack_images(tape, support_images)?;
        let image_embed = match &self.image {
            Some(embedder) => Some(embedder.forward(tape, bound, images)?),
            None => None,
        };
        let n_layers = self.spec.layers.len();
        let mut weights = Vec::with_capacity(n_layers);
        let mut bn = Vec::with_capacity(n_layers);
        let mut bn_stats: Vec<Option<(Tid, Tid)>> = vec![None; n_layers];
        let mut layouts: Vec<Option<TokenLayout>> = vec![None; n_layers];
        let mut attention = Vec::new();
        let mut z = images;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let lw = match &self.layers[i] {
                Some(gen) => {
                    let act_embed = gen.act.forward(tape, bound, z)?;
                    let (tokens, layout) = encode_tokens(
                        tape,
                        bound,
                        &self.codebook,
                        labels,
                        image_embed,
                        act_embed,
                        gen.mu,
                        gen.width,
                    )?;
                    let mut maps = Vec::new();
                    let out = gen.transformer.forward(
                        tape,
                        bound,
                        tokens,
                        layout.n_samples(),
                        self.config.transformer.num_heads,
                        retain_attention.then_some(&mut maps),
                    )?;
                    let (kernel, bias) = decode_weights(
                        tape,
                        out,
                        &layout,
                        self.config.allocation,
                        &gen.geom,
                        layer.kind,
                    )?;
                    if retain_attention {
                        attention.push(LayerAttention {
                            cnn_layer: i,
                            layout: layout.clone(),
                            maps,
                        });
                    }
                    layouts[i] = Some(layout);
                    LayerWeights {
                        kernel,
                        bias,
                        source: WeightSource::Generated,
                    }
                }
                None => self.cnn.learned_layer(i, bound).ok_or_else(|| {
                    ModelError::config(format!("layer {} has no weight source", i))
                })?,
            };
            let bnw: Option<BnWeights> = self.cnn.bn_weights(i, bound);
            if layer.kind == LayerKind::Conv {
                let (next, captured) =
                    conv_layer_forward(tape, z, layer, lw, bnw, LayerBn::Batch)?;
                z = next;
                bn_stats[i] = captured;
            }
            weights.push(lw);
            bn.push(bnw);
        }
        Ok(Generation {
            weights: GeneratedWeights { layers: weights, bn },
            bn_stats,
            layouts,
            attention,
        })
    }

    /// Geometry of a generated layer, for tests and tooling.
    pub fn layer_geometry(&self, i: usize) -> Option<(SliceGeometry, usize)> {
        self.layers[i].as_ref().map(|g| (g.geom, g.width))
    }

    /// Serializes config, spec, and every parameter tensor to `path`.
    /// `extra` is an opaque caller header (training step, RNG state, ...).
    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), ModelError> {
        let header = serde_json::json!({
            "config": self.config,
            "spec": self.spec,
            "extra": extra,
        });
        let file = std::fs::File::create(path)
            .map_err(|e| ModelError::checkpoint(format!("create {}: {}", path.display(), e)))?;
        let mut out = std::io::BufWriter::new(file);
        write_checkpoint(&mut out, &header, self.params.iter())
    }

    /// Restores a generator saved by [`Generator::save`]. The checkpoint must
    /// cover the parameter set exactly; shapes are checked per tensor.
    /// Returns the generator and the caller's `extra` header field.
    pub fn load(path: &Path) -> Result<(Generator<S>, serde_json::Value), ModelError> {
        let file = std::fs::File::open(path)
            .map_err(|e| ModelError::checkpoint(format!("open {}: {}", path.display(), e)))?;
        let mut input = std::io::BufReader::new(file);
        let (header, tensors) = read_checkpoint::<S, _>(&mut input)?;
        let field = |key: &str| {
            header
                .get(key)
                .cloned()
                .ok_or_else(|| ModelError::checkpoint(format!("header missing {:?}", key)))
        };
        let config: GeneratorConfig = serde_json::from_value(field("config")?)
            .map_err(|e| ModelError::checkpoint(format!("config decode: {}", e)))?;
        let spec: CnnSpec = serde_json::from_value(field("spec")?)
            .map_err(|e| ModelError::checkpoint(format!("spec decode: {}", e)))?;
        let extra = header
            .get("extra")
            .cloned()
            .unwrap_or(serde_json::Value::Null);
        let mut generator = Generator::new(config, spec, 0)?;
        if tensors.len() != generator.params.len() {
            return Err(ModelError::checkpoint(format!(
                "checkpoint has {} tensors, model has {} parameters",
                tensors.len(),
                generator.params.len()
            )));
        }
        for (name, value) in tensors {
            generator.params.set(&name, value)?;
        }
        Ok((generator, extra))
    }
}

/// Convenience wrapper for one episode pass: generate weights on the support
/// set, then run the query batch through the generated CNN with the
/// support-set normalization statistics.
pub fn episode_forward<S: Real>(
    tape: &mut Tape<S>,
    generator: &Generator<S>,
    bound: &Bound,
    support_images: &[Tensor<S>],
    support_labels: &[Option<usize>],
    query_images: &[Tensor<S>],
    retain_attention: bool,
) -> Result<(Generation<S>, CnnForward), ModelError> {
    let generation = generator.generate(
        tape,
        bound,
        support_images,
        support_labels,
        retain_attention,
    )?;
    let q = stack_images(tape, query_images)?;
    let fwd = cnn_forward(
        tape,
        q,
        &generator.spec,
        &generation.weights,
        BnSource::Stats(&generation.bn_stats),
    )?;
    Ok((generation, fwd))
}

/// One training step's loss for an episode: query cross-entropy through the
/// generated CNN.
pub fn episode_loss<S: Real>(
    tape: &mut Tape<S>,
    generator: &Generator<S>,
    bound: &Bound,
    support_images: &[Tensor<S>],
    support_labels: &[Option<usize>],
    query_images: &[Tensor<S>],
    query_labels: &[usize],
) -> Result<(Tid, CnnForward), ModelError> {
    let (_, fwd) = episode_forward(
        tape,
        generator,
        bound,
        support_images,
        support_labels,
        query_images,
        false,
    )?;
    let loss = tape.cross_entropy(fwd.logits, query_labels)?;
    Ok((loss, fwd))
}

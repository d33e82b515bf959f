//! Multi-head self-attention stacks over episode token sequences.
//!
//! There are no positional encodings and no attention masks: the token set is
//! treated as unordered, which is what makes the generator permutation
//! invariant over support samples. Blocks are post-norm: attention, residual,
//! layer norm, then (unless simplified) a ReLU feed-forward with its own
//! residual and norm.

use hypergen_tensor::{Real, Tape, Tensor, Tid};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::params::{he_init, Bound, ParamId, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformerVariant {
    /// One stack over the full token sequence (samples and placeholders).
    EncoderOnly,
    /// Encoder over sample tokens; decoder over placeholder tokens with
    /// cross-attention into the encoder output.
    EncoderDecoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    /// Attention and feed-forward widths as a fraction of the token width.
    pub nu: f64,
    pub variant: TransformerVariant,
    /// Drop the feed-forward half of every block, leaving attention,
    /// residual, and norm only.
    pub simplified: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            num_layers: 2,
            num_heads: 2,
            nu: 1.0,
            variant: TransformerVariant::EncoderOnly,
            simplified: false,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_layers == 0 || self.num_heads == 0 {
            return Err(ModelError::config("transformer needs >= 1 layer and head"));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(ModelError::config(format!("nu must be positive, got {}", self.nu)));
        }
        Ok(())
    }

    /// Total attention width for a token width: round(nu * width) lifted to
    /// at least 1 and padded up to a multiple of the head count.
    pub fn attn_dim(&self, width: usize) -> usize {
        let base = ((self.nu * width as f64).round() as usize).max(1);
        base.div_ceil(self.num_heads) * self.num_heads
    }

    /// Feed-forward inner width: round(nu * width), at least 1.
    pub fn ff_dim(&self, width: usize) -> usize {
        ((self.nu * width as f64).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    EncoderSelf,
    DecoderSelf,
    DecoderCross,
}

/// One retained attention map: row-stochastic weights, [heads, queries, keys].
pub struct AttentionMap<S: Real> {
    pub block: usize,
    pub kind: AttentionKind,
    pub weights: Tensor<S>,
}

struct AttentionParams {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ob: ParamId,
}

struct NormParams {
    gamma: ParamId,
    beta: ParamId,
}

struct FfParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct EncoderBlock {
    attn: AttentionParams,
    ln1: NormParams,
    ff: Option<(FfParams, NormParams)>,
}

struct DecoderBlock {
    self_attn: AttentionParams,
    ln1: NormParams,
    cross: AttentionParams,
    ln2: NormParams,
    ff: Option<(FfParams, NormParams)>,
}

/// Parameters of one per-layer transformer, tied to a fixed token width.
pub struct TransformerParams {
    encoder: Vec<EncoderBlock>,
    decoder: Vec<DecoderBlock>,
    width: usize,
    attn_dim: usize,
}

fn init_attention<S: Real, R: Rng>(
    prefix: &str,
    width: usize,
    attn_dim: usize,
    params: &mut ParamSet<S>,
    rng: &mut R,
) -> AttentionParams {
    AttentionParams {
        wq: params.add(format!("{}.wq", prefix), he_init(rng, vec![width, attn_dim], width)),
        wk: params.add(format!("{}.wk", prefix), he_init(rng, vec![width, attn_dim], width)),
        wv: params.add(format!("{}.wv", prefix), he_init(rng, vec![width, attn_dim], width)),
        wo: params.add(format!("{}.wo", prefix), he_init(rng, vec![attn_dim, width], attn_dim)),
        ob: params.add(format!("{}.ob", prefix), Tensor::zeros(vec![width])),
    }
}

fn init_norm<S: Real>(prefix: &str, width: usize, params: &mut ParamSet<S>) -> NormParams {
    NormParams {
        gamma: params.add(format!("{}.gamma", prefix), Tensor::full(vec![width], S::one())),
        beta: params.add(format!("{}.beta", prefix), Tensor::zeros(vec![width])),
    }
}

fn init_ff<S: Real, R: Rng>(
    prefix: &str,
    width: usize,
    inner: usize,
    params: &mut ParamSet<S>,
    rng: &mut R,
) -> FfParams {
    FfParams {
        w1: params.add(format!("{}.w1", prefix), he_init(rng, vec![width, inner], width)),
        b1: params.add(format!("{}.b1", prefix), Tensor::zeros(vec![inner])),
        w2: params.add(format!("{}.w2", prefix), he_init(rng, vec![inner, width], inner)),
        b2: params.add(format!("{}.b2", prefix), Tensor::zeros(vec![width])),
    }
}

impl TransformerParams {
    pub fn init<S: Real, R: Rng>(
        config: &TransformerConfig,
        width: usize,
        prefix: &str,
        params: &mut ParamSet<S>,
        rng: &mut R,
    ) -> Result<TransformerParams, ModelError> {
        config.validate()?;
        let attn_dim = config.attn_dim(width);
        let ff_dim = config.ff_dim(width);
        let mut encoder = Vec::new();
        let mut decoder = Vec::new();
        for b in 0..config.num_layers {
            let base = format!("{}.e{}", prefix, b);
            encoder.push(EncoderBlock {
                attn: init_attention(&format!("{}.attn", base), width, attn_dim, params, rng),
                ln1: init_norm(&format!("{}.ln1", base), width, params),
                ff: (!config.simplified).then(|| {
                    (
                        init_ff(&format!("{}.ff", base), width, ff_dim, params, rng),
                        init_norm(&format!("{}.ln2", base), width, params),
                    )
                }),
            });
        }
        if config.variant == TransformerVariant::EncoderDecoder {
            for b in 0..config.num_layers {
                let base = format!("{}.d{}", prefix, b);
                decoder.push(DecoderBlock {
                    self_attn: init_attention(&format!("{}.self", base), width, attn_dim, params, rng),
                    ln1: init_norm(&format!("{}.ln1", base), width, params),
                    cross: init_attention(&format!("{}.cross", base), width, attn_dim, params, rng),
                    ln2: init_norm(&format!("{}.ln2", base), width, params),
                    ff: (!config.simplified).then(|| {
                        (
                            init_ff(&format!("{}.ff", base), width, ff_dim, params, rng),
                            init_norm(&format!("{}.ln3", base), width, params),
                        )
                    }),
                });
            }
        }
        Ok(TransformerParams {
            encoder,
            decoder,
            width,
            attn_dim,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Runs the stack over a [T, width] token matrix whose first `n_samples`
    /// rows are sample tokens and remaining rows are placeholders. Returns a
    /// [T, width] matrix in the same order for either variant. Retained
    /// attention maps are appended to `retain` when provided.
    pub fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        tokens: Tid,
        n_samples: usize,
        heads: usize,
        mut retain: Option<&mut Vec<AttentionMap<S>>>,
    ) -> Result<Tid, ModelError> {
        let shape = tape.shape(tokens).to_vec();
        if shape.len() != 2 || shape[1] != self.width {
            return Err(ModelError::config(format!(
                "token matrix {:?} does not match transformer width {}",
                shape, self.width
            )));
        }
        let n_tokens = shape[0];
        if n_samples > n_tokens {
            return Err(ModelError::config("sample count exceeds token count"));
        }
        let out = if self.decoder.is_empty() {
            let mut x = tokens;
            for (b, block) in self.encoder.iter().enumerate() {
                x = self.encoder_block(tape, bound, x, block, heads, b, retain.as_deref_mut())?;
            }
            x
        } else {
            let samples = tape.slice_axis(tokens, 0, 0, n_samples)?;
            let placeholders = tape.slice_axis(tokens, 0, n_samples, n_tokens - n_samples)?;
            let mut enc = samples;
            for (b, block) in self.encoder.iter().enumerate() {
                enc = self.encoder_block(tape, bound, enc, block, heads, b, retain.as_deref_mut())?;
            }
            let mut dec = placeholders;
            for (b, block) in self.decoder.iter().enumerate() {
                dec = self.decoder_block(tape, bound, dec, enc, block, heads, b, retain.as_deref_mut())?;
            }
            tape.concat(&[enc, dec], 0)?
        };
        if !tape.value(out).is_finite() {
            return Err(hypergen_tensor::TensorError::non_finite(
                "transformer_forward",
                "output tokens",
            )
            .into());
        }
        Ok(out)
    }

    fn encoder_block<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        x: Tid,
        block: &EncoderBlock,
        heads: usize,
        index: usize,
        mut retain: Option<&mut Vec<AttentionMap<S>>>,
    ) -> Result<Tid, ModelError> {
        let attn = self.attention(
            tape,
            bound,
            x,
            x,
            &block.attn,
            heads,
            (index, AttentionKind::EncoderSelf),
            retain.as_deref_mut(),
        )?;
        let x = residual_norm(tape, bound, x, attn, &block.ln1)?;
        match &block.ff {
            None => Ok(x),
            Some((ff, ln2)) => {
                let y = feed_forward(tape, bound, x, ff)?;
                residual_norm(tape, bound, x, y, ln2)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn decoder_block<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        x: Tid,
        enc: Tid,
        block: &DecoderBlock,
        heads: usize,
        index: usize,
        mut retain: Option<&mut Vec<AttentionMap<S>>>,
    ) -> Result<Tid, ModelError> {
        let self_attn = self.attention(
            tape,
            bound,
            x,
            x,
            &block.self_attn,
            heads,
            (index, AttentionKind::DecoderSelf),
            retain.as_deref_mut(),
        )?;
        let x = residual_norm(tape, bound, x, self_attn, &block.ln1)?;
        let cross = self.attention(
            tape,
            bound,
            x,
            enc,
            &block.cross,
            heads,
            (index, AttentionKind::DecoderCross),
            retain.as_deref_mut(),
        )?;
        let x = residual_norm(tape, bound, x, cross, &block.ln2)?;
        match &block.ff {
            None => Ok(x),
            Some((ff, ln3)) => {
                let y = feed_forward(tape, bound, x, ff)?;
                residual_norm(tape, bound, x, y, ln3)
            }
        }
    }

    /// Scaled dot-product attention of `q_in` rows over `kv_in` rows.
    #[allow(clippy::too_many_arguments)]
    fn attention<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        q_in: Tid,
        kv_in: Tid,
        p: &AttentionParams,
        heads: usize,
        tag: (usize, AttentionKind),
        retain: Option<&mut Vec<AttentionMap<S>>>,
    ) -> Result<Tid, ModelError> {
        let q = tape.matmul(q_in, bound.tid(p.wq))?;
        let k = tape.matmul(kv_in, bound.tid(p.wk))?;
        let v = tape.matmul(kv_in, bound.tid(p.wv))?;
        let dh = self.attn_dim / heads;
        let scale = S::from_f64(1.0 / (dh as f64).sqrt());
        let n_q = tape.shape(q)[0];
        let n_k = tape.shape(k)[0];
        let mut outputs = Vec::with_capacity(heads);
        let mut maps: Vec<Tid> = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_axis(q, 1, h * dh, dh)?;
            let kh = tape.slice_axis(k, 1, h * dh, dh)?;
            let vh = tape.slice_axis(v, 1, h * dh, dh)?;
            let kt = tape.transpose2d(kh)?;
            let logits = tape.matmul(qh, kt)?;
            let logits = tape.scale(logits, scale)?;
            let a = tape.softmax(logits, 1)?;
            maps.push(a);
            outputs.push(tape.matmul(a, vh)?);
        }
        if let Some(retain) = retain {
            let mut data = Vec::with_capacity(heads * n_q * n_k);
            for &a in &maps {
                data.extend_from_slice(tape.value(a).data());
            }
            retain.push(AttentionMap {
                block: tag.0,
                kind: tag.1,
                weights: Tensor::new(vec![heads, n_q, n_k], data)?,
            });
        }
        let merged = tape.concat(&outputs, 1)?;
        Ok(tape.linear(merged, bound.tid(p.wo), bound.tid(p.ob))?)
    }
}

fn residual_norm<S: Real>(
    tape: &mut Tape<S>,
    bound: &Bound,
    x: Tid,
    y: Tid,
    ln: &NormParams,
) -> Result<Tid, ModelError> {
    let sum = tape.add(x, y)?;
    Ok(tape.layer_norm(sum, bound.tid(ln.gamma), bound.tid(ln.beta), S::from_f64(1e-5))?)
}

fn feed_forward<S: Real>(
    tape: &mut Tape<S>,
    bound: &Bound,
    x: Tid,
    ff: &FfParams,
) -> Result<Tid, ModelError> {
    let h = tape.linear(x, bound.tid(ff.w1), bound.tid(ff.b1))?;
    let h = tape.relu(h)?;
    Ok(tape.linear(h, bound.tid(ff.w2), bound.tid(ff.b2))?)
}

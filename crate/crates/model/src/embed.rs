//! Trainable feature extractors that produce the token embeddings.
//!
//! Both extractors normalize with the statistics of the batch they are
//! applied to (the support set), so an episode is self-contained: nothing
//! about the embeddings depends on data outside the episode.

use hypergen_tensor::{Padding, Real, Tape, Tensor, Tid};
use rand::Rng;

use crate::cnn::BN_EPS;
use crate::error::ModelError;
use crate::params::{he_init, Bound, ParamId, ParamSet};

struct ConvBn {
    kernel: ParamId,
    bias: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

/// Shared image embedder: four stride-2 SAME 3x3 conv + batch norm + ReLU
/// stages, spatially averaged to a fixed-width vector. The width does not
/// depend on the target CNN size.
pub struct ImageEmbedder {
    stages: Vec<ConvBn>,
}

impl ImageEmbedder {
    pub const DIM: usize = 32;

    pub fn init<S: Real, R: Rng>(
        in_channels: usize,
        params: &mut ParamSet<S>,
        rng: &mut R,
    ) -> ImageEmbedder {
        let mut stages = Vec::with_capacity(4);
        let mut c_in = in_channels;
        for i in 0..4 {
            let fan_in = 9 * c_in;
            stages.push(ConvBn {
                kernel: params.add(
                    format!("img.s{}.kernel", i),
                    he_init(rng, vec![3, 3, c_in, Self::DIM], fan_in),
                ),
                bias: params.add(
                    format!("img.s{}.bias", i),
                    Tensor::zeros(vec![Self::DIM]),
                ),
                gamma: params.add(
                    format!("img.s{}.bn_gamma", i),
                    Tensor::full(vec![Self::DIM], S::one()),
                ),
                beta: params.add(
                    format!("img.s{}.bn_beta", i),
                    Tensor::zeros(vec![Self::DIM]),
                ),
            });
            c_in = Self::DIM;
        }
        ImageEmbedder { stages }
    }

    /// [B,C,H,W] images -> [B, DIM] embeddings.
    pub fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        images: Tid,
    ) -> Result<Tid, ModelError> {
        let eps = S::from_f64(BN_EPS);
        let mut z = images;
        for stage in &self.stages {
            z = tape.conv2d(
                z,
                bound.tid(stage.kernel),
                bound.tid(stage.bias),
                2,
                Padding::Same,
            )?;
            let (mean, var) = tape.batch_stats(z)?;
            z = tape.bn_apply(
                z,
                mean,
                var,
                bound.tid(stage.gamma),
                bound.tid(stage.beta),
                eps,
            )?;
            z = tape.relu(z)?;
        }
        Ok(tape.mean_axes(z, &[2, 3])?)
    }
}

/// Per-layer activation embedder: two 3x3 convolutions (stride 1, then
/// stride 2), both outputs spatially averaged and concatenated into an
/// `out_dim`-channel embedding. The kernel sizes and strides are a defaulted
/// detail; only the two-conv shape and the averaged-and-concatenated output
/// are pinned down.
pub struct ActivationEmbedder {
    c0: (ParamId, ParamId),
    c1: (ParamId, ParamId),
}

impl ActivationEmbedder {
    pub fn init<S: Real, R: Rng>(
        in_channels: usize,
        out_dim: usize,
        prefix: &str,
        params: &mut ParamSet<S>,
        rng: &mut R,
    ) -> Result<ActivationEmbedder, ModelError> {
        if out_dim < 2 {
            return Err(ModelError::config(
                "activation embedding needs at least 2 channels to split across its two stages",
            ));
        }
        let half = out_dim / 2;
        let c0_out = out_dim - half;
        let c0 = (
            params.add(
                format!("{}.act0.kernel", prefix),
                he_init(rng, vec![3, 3, in_channels, c0_out], 9 * in_channels),
            ),
            params.add(
                format!("{}.act0.bias", prefix),
                Tensor::zeros(vec![c0_out]),
            ),
        );
        let c1 = (
            params.add(
                format!("{}.act1.kernel", prefix),
                he_init(rng, vec![3, 3, c0_out, half], 9 * c0_out),
            ),
            params.add(
                format!("{}.act1.bias", prefix),
                Tensor::zeros(vec![half]),
            ),
        );
        Ok(ActivationEmbedder { c0, c1 })
    }

    /// [B,C,H,W] activations -> [B, out_dim] embeddings.
    pub fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        z: Tid,
    ) -> Result<Tid, ModelError> {
        let y0 = tape.conv2d(z, bound.tid(self.c0.0), bound.tid(self.c0.1), 1, Padding::Same)?;
        let y0 = tape.relu(y0)?;
        let y1 = tape.conv2d(y0, bound.tid(self.c1.0), bound.tid(self.c1.1), 2, Padding::Same)?;
        let y1 = tape.relu(y1)?;
        let g0 = tape.mean_axes(y0, &[2, 3])?;
        let g1 = tape.mean_axes(y1, &[2, 3])?;
        Ok(tape.concat(&[g0, g1], 1)?)
    }
}

//! The small target CNN: architecture spec, forward pass, and a
//! conventionally trained oracle used as an upper-bound reference.

use hypergen_tensor::{Padding, Real, RunningStats, Tape, Tensor, Tid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::params::{he_init, Bound, ParamId, ParamSet};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightSource {
    Generated,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    Logits,
}

/// Serializable mirror of the tape's padding modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PadMode {
    Same,
    Valid,
}

impl From<PadMode> for Padding {
    fn from(p: PadMode) -> Padding {
        match p {
            PadMode::Same => Padding::Same,
            PadMode::Valid => Padding::Valid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Output channels; the class count for the logits layer.
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: PadMode,
    pub bn: bool,
    /// 2x2 stride-2 max pool after the activation.
    pub pool: bool,
    pub source: WeightSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub layers: Vec<LayerSpec>,
    pub n_classes: usize,
    /// [channels, height, width] of the input images.
    pub input_shape: [usize; 3],
}

impl CnnSpec {
    /// Standard few-shot body: `depth` SAME 3x3 stride-1 convolutions with
    /// `channels` outputs, each followed by batch norm, ReLU, and a 2x2
    /// stride-2 max pool, then a logits layer over spatially pooled features.
    pub fn standard(
        channels: usize,
        depth: usize,
        n_classes: usize,
        input_shape: [usize; 3],
        body: WeightSource,
        logits: WeightSource,
    ) -> CnnSpec {
        let mut layers: Vec<LayerSpec> = (0..depth)
            .map(|_| LayerSpec {
                kind: LayerKind::Conv,
                channels,
                kernel: 3,
                stride: 1,
                pad: PadMode::Same,
                bn: true,
                pool: true,
                source: body,
            })
            .collect();
        layers.push(LayerSpec {
            kind: LayerKind::Logits,
            channels: n_classes,
            kernel: 1,
            stride: 1,
            pad: PadMode::Valid,
            bn: false,
            pool: false,
            source: logits,
        });
        CnnSpec {
            layers,
            n_classes,
            input_shape,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_classes == 0 || self.input_shape.iter().any(|&e| e == 0) {
            return Err(ModelError::config("empty class set or input shape"));
        }
        let Some(last) = self.layers.last() else {
            return Err(ModelError::config("spec has no layers"));
        };
        if last.kind != LayerKind::Logits || last.channels != self.n_classes {
            return Err(ModelError::config(format!(
                "final layer must be a logits layer of width {}",
                self.n_classes
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let is_last = i + 1 == self.layers.len();
            if (l.kind == LayerKind::Logits) != is_last {
                return Err(ModelError::config("logits layer must be last and unique"));
            }
            if l.kind == LayerKind::Conv && (l.kernel == 0 || l.stride == 0 || l.channels == 0) {
                return Err(ModelError::config(format!("degenerate conv layer {}", i)));
            }
        }
        Ok(())
    }

    /// Input channel count of layer `i`; layer 0 sees the raw image.
    pub fn in_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.input_shape[0]
        } else {
            self.layers[i - 1].channels
        }
    }

    pub fn any_generated(&self) -> bool {
        self.layers
            .iter()
            .any(|l| l.source == WeightSource::Generated)
    }

    pub fn all_learned(&self) -> bool {
        !self.any_generated()
    }
}

/// Tape handles for one layer's weights, with provenance. Conv kernels are
/// [k,k,c_in,c_out]; the logits layer holds a [c_in,n_classes] matrix.
#[derive(Debug, Clone, Copy)]
pub struct LayerWeights {
    pub kernel: Tid,
    pub bias: Tid,
    pub source: WeightSource,
}

#[derive(Debug, Clone, Copy)]
pub struct BnWeights {
    pub gamma: Tid,
    pub beta: Tid,
}

/// Full weight assignment for a [`CnnSpec`], addressed into one tape. Entries
/// come from learned leaves or from decoded generator outputs; batch norm
/// affines are always learned.
pub struct GeneratedWeights {
    pub layers: Vec<LayerWeights>,
    pub bn: Vec<Option<BnWeights>>,
}

/// ParamSet handles for the learned portion of a spec's weights: kernels and
/// biases of Learned layers plus every batch-norm affine.
pub struct CnnParams {
    layers: Vec<Option<(ParamId, ParamId)>>,
    bn: Vec<Option<(ParamId, ParamId)>>,
}

impl CnnParams {
    pub fn init<S: Real, R: Rng>(
        spec: &CnnSpec,
        prefix: &str,
        params: &mut ParamSet<S>,
        rng: &mut R,
    ) -> Result<CnnParams, ModelError> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut bn = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            let c_in = spec.in_channels(i);
            if l.source == WeightSource::Learned {
                let (shape, fan_in) = match l.kind {
                    LayerKind::Conv => (
                        vec![l.kernel, l.kernel, c_in, l.channels],
                        l.kernel * l.kernel * c_in,
                    ),
                    LayerKind::Logits => (vec![c_in, l.channels], c_in),
                };
                let kernel = params.add(
                    format!("{}{}.kernel", prefix, i),
                    he_init(rng, shape, fan_in),
                );
                let bias = params.add(format!("{}{}.bias", prefix, i), Tensor::zeros(vec![l.channels]));
                layers.push(Some((kernel, bias)));
            } else {
                layers.push(None);
            }
            if l.bn {
                let gamma = params.add(
                    format!("{}{}.bn_gamma", prefix, i),
                    Tensor::full(vec![l.channels], S::one()),
                );
                let beta = params.add(
                    format!("{}{}.bn_beta", prefix, i),
                    Tensor::zeros(vec![l.channels]),
                );
                bn.push(Some((gamma, beta)));
            } else {
                bn.push(None);
            }
        }
        Ok(CnnParams { layers, bn })
    }

    /// Weight handles of a Learned layer; None when the layer is Generated.
    pub fn learned_layer(&self, i: usize, bound: &Bound) -> Option<LayerWeights> {
        self.layers[i].map(|(kernel, bias)| LayerWeights {
            kernel: bound.tid(kernel),
            bias: bound.tid(bias),
            source: WeightSource::Learned,
        })
    }

    pub fn bn_weights(&self, i: usize, bound: &Bound) -> Option<BnWeights> {
        self.bn[i].map(|(gamma, beta)| BnWeights {
            gamma: bound.tid(gamma),
            beta: bound.tid(beta),
        })
    }

    /// Full weight table for an all-Learned spec.
    pub fn all_learned_weights(
        &self,
        spec: &CnnSpec,
        bound: &Bound,
    ) -> Result<GeneratedWeights, ModelError> {
        let mut layers = Vec::with_capacity(spec.layers.len());
        for i in 0..spec.layers.len() {
            layers.push(self.learned_layer(i, bound).ok_or_else(|| {
                ModelError::config(format!("layer {} is not Learned", i))
            })?);
        }
        let bn = (0..spec.layers.len())
            .map(|i| self.bn_weights(i, bound))
            .collect();
        Ok(GeneratedWeights { layers, bn })
    }
}

/// Where batch-norm statistics come from during a forward pass.
pub enum BnSource<'a, S: Real> {
    /// Differentiable statistics of the current batch (support pass).
    Batch,
    /// Statistics captured by an earlier pass on the same tape (query pass
    /// normalized with support statistics).
    Stats(&'a [Option<(Tid, Tid)>]),
    /// Frozen running statistics (conventional evaluation).
    Running(&'a [Option<RunningStats<S>>]),
}

pub struct CnnForward {
    pub logits: Tid,
    /// Spatially pooled features feeding the logits layer, [B, C].
    pub features: Tid,
    /// Per-layer batch statistics captured when [`BnSource::Batch`] ran.
    pub bn_stats: Vec<Option<(Tid, Tid)>>,
}

/// Stacks same-shaped [C,H,W] images into a [B,C,H,W] constant on the tape.
pub fn stack_images<S: Real>(
    tape: &mut Tape<S>,
    images: &[Tensor<S>],
) -> Result<Tid, ModelError> {
    let Some(first) = images.first() else {
        return Err(ModelError::config("empty image batch"));
    };
    let shape = first.shape().to_vec();
    if shape.len() != 3 {
        return Err(ModelError::config(format!(
            "images must be [C,H,W], got {:?}",
            shape
        )));
    }
    let mut data = Vec::with_capacity(images.len() * first.numel());
    for img in images {
        if img.shape() != shape.as_slice() {
            return Err(ModelError::config(format!(
                "mixed image shapes {:?} vs {:?}",
                img.shape(),
                shape
            )));
        }
        data.extend_from_slice(img.data());
    }
    let batch = Tensor::new(
        vec![images.len(), shape[0], shape[1], shape[2]],
        data,
    )?;
    Ok(tape.constant(batch))
}

pub(crate) enum LayerBn<'a, S: Real> {
    Batch,
    Given(Tid, Tid),
    Frozen(&'a RunningStats<S>),
}

/// One conv body layer: convolution, optional batch norm, ReLU, optional
/// 2x2 max pool. Returns the output activations and, when statistics were
/// computed from this batch, their tape handles.
pub(crate) fn conv_layer_forward<S: Real>(
    tape: &mut Tape<S>,
    x: Tid,
    layer: &LayerSpec,
    w: LayerWeights,
    bnw: Option<BnWeights>,
    bn: LayerBn<S>,
) -> Result<(Tid, Option<(Tid, Tid)>), ModelError> {
    let mut z = tape.conv2d(x, w.kernel, w.bias, layer.stride, layer.pad.into())?;
    let mut captured = None;
    if let Some(bnw) = bnw {
        let eps = S::from_f64(BN_EPS);
        let (mean, var) = match bn {
            LayerBn::Batch => {
                let (m, v) = tape.batch_stats(z)?;
                captured = Some((m, v));
                (m, v)
            }
            LayerBn::Given(m, v) => (m, v),
            LayerBn::Frozen(stats) => (
                tape.constant(Tensor::from_vec(stats.mean.clone())),
                tape.constant(Tensor::from_vec(stats.var.clone())),
            ),
        };
        z = tape.bn_apply(z, mean, var, bnw.gamma, bnw.beta, eps)?;
    }
    z = tape.relu(z)?;
    if layer.pool {
        z = tape.maxpool2d(z, 2, 2)?;
    }
    Ok((z, captured))
}

/// Spatial average over the final feature map, then the logits layer.
pub(crate) fn logits_forward<S: Real>(
    tape: &mut Tape<S>,
    feature_map: Tid,
    w: LayerWeights,
) -> Result<(Tid, Tid), ModelError> {
    let features = tape.mean_axes(feature_map, &[2, 3])?;
    let logits = tape.linear(features, w.kernel, w.bias)?;
    Ok((features, logits))
}

/// Runs the CNN on a [B,C,H,W] batch already on the tape. Differentiable
/// through every weight handle, including generated ones.
pub fn cnn_forward<S: Real>(
    tape: &mut Tape<S>,
    images: Tid,
    spec: &CnnSpec,
    weights: &GeneratedWeights,
    bn: BnSource<S>,
) -> Result<CnnForward, ModelError> {
    spec.validate()?;
    if weights.layers.len() != spec.layers.len() {
        return Err(ModelError::config(format!(
            "{} weight entries for {} layers",
            weights.layers.len(),
            spec.layers.len()
        )));
    }
    let mut z = images;
    let mut bn_stats: Vec<Option<(Tid, Tid)>> = vec![None; spec.layers.len()];
    for (i, layer) in spec.layers.iter().enumerate() {
        if layer.kind != LayerKind::Conv {
            break;
        }
        let layer_bn = match &bn {
            BnSource::Batch => LayerBn::Batch,
            BnSource::Stats(stats) => {
                let (m, v) = stats[i].ok_or_else(|| {
                    ModelError::config(format!("no captured statistics for layer {}", i))
                })?;
                LayerBn::Given(m, v)
            }
            BnSource::Running(running) => LayerBn::Frozen(running[i].as_ref().ok_or_else(
                || ModelError::config(format!("no running statistics for layer {}", i)),
            )?),
        };
        let (next, captured) =
            conv_layer_forward(tape, z, layer, weights.layers[i], weights.bn[i], layer_bn)?;
        z = next;
        bn_stats[i] = captured;
    }
    let last = spec.layers.len() - 1;
    let (features, logits) = logits_forward(tape, z, weights.layers[last])?;
    Ok(CnnForward {
        logits,
        features,
        bn_stats,
    })
}

/// Fraction of rows whose argmax equals the label; ties resolve to the lowest
/// index, deterministically.
pub fn accuracy<S: Real>(logits: &Tensor<S>, labels: &[usize]) -> f64 {
    let n = logits.shape()[1];
    let mut hits = 0usize;
    for (b, &lab) in labels.iter().enumerate() {
        let row = &logits.data()[b * n..(b + 1) * n];
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == lab {
            hits += 1;
        }
    }
    hits as f64 / labels.len().max(1) as f64
}

pub struct OracleOutcome<S: Real> {
    pub params: ParamSet<S>,
    pub running: Vec<Option<RunningStats<S>>>,
    pub train_accuracy: f64,
    pub holdout_accuracy: f64,
    pub final_loss: f64,
}

/// Conventional SGD reference: trains an all-Learned spec on every provided
/// sample. Pure function of its arguments, so a seed pins the exact weights.
/// The trained accuracy upper-bounds what a weight generator could reach on
/// the same classes.
pub fn oracle_train<S: Real>(
    train: &[(Tensor<S>, usize)],
    holdout: &[(Tensor<S>, usize)],
    spec: &CnnSpec,
    steps: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<OracleOutcome<S>, ModelError> {
    if !spec.all_learned() {
        return Err(ModelError::config(
            "oracle training requires an all-Learned spec",
        ));
    }
    if train.is_empty() {
        return Err(ModelError::config("oracle training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let handles = CnnParams::init(spec, "cnn", &mut params, &mut rng)?;
    let mut running: Vec<Option<RunningStats<S>>> = spec
        .layers
        .iter()
        .map(|l| l.bn.then(|| RunningStats::new(l.channels)))
        .collect();
    let batch_size = batch_size.clamp(1, train.len());
    let momentum = S::from_f64(BN_MOMENTUM);
    let mut final_loss = f64::NAN;
    for _ in 0..steps {
        let idx: Vec<usize> = (0..batch_size)
            .map(|_| rng.gen_range(0..train.len()))
            .collect();
        let images: Vec<Tensor<S>> = idx.iter().map(|&i| train[i].0.clone()).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| train[i].1).collect();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let weights = handles.all_learned_weights(spec, &bound)?;
        let x = stack_images(&mut tape, &images)?;
        let fwd = cnn_forward(&mut tape, x, spec, &weights, BnSource::Batch)?;
        let loss = tape.cross_entropy(fwd.logits, &labels)?;
        final_loss = tape.value(loss).item()?.as_f64();
        let grads = tape.backward(loss)?;
        // Fold this batch's statistics into the running buffers, mirroring
        // train-mode batch norm.
        for (i, slot) in running.iter_mut().enumerate() {
            if let (Some(stats), Some((m, v))) = (slot.as_mut(), fwd.bn_stats[i]) {
                let one_m = S::one() - momentum;
                for (r, &b) in stats.mean.iter_mut().zip(tape.value(m).data()) {
                    *r = *r * one_m + b * momentum;
                }
                for (r, &b) in stats.var.iter_mut().zip(tape.value(v).data()) {
                    *r = *r * one_m + b * momentum;
                }
            }
        }
        let step = S::from_f64(lr);
        for (i, value) in params.values_mut().enumerate() {
            if let Some(g) = grads.get(bound.tids()[i]) {
                for (v, &gv) in value.data_mut().iter_mut().zip(g.data()) {
                    *v -= step * gv;
                }
            }
        }
    }
    let eval = |set: &[(Tensor<S>, usize)]| -> Result<f64, ModelError> {
        if set.is_empty() {
            return Ok(f64::NAN);
        }
        let images: Vec<Tensor<S>> = set.iter().map(|(img, _)| img.clone()).collect();
        let labels: Vec<usize> = set.iter().map(|&(_, lab)| lab).collect();
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let weights = handles.all_learned_weights(spec, &bound)?;
        let x = stack_images(&mut tape, &images)?;
        let fwd = cnn_forward(&mut tape, x, spec, &weights, BnSource::Running(&running))?;
        Ok(accuracy(tape.value(fwd.logits), &labels))
    };
    let train_accuracy = eval(train)?;
    let holdout_accuracy = eval(holdout)?;
    Ok(OracleOutcome {
        params,
        running,
        train_accuracy,
        holdout_accuracy,
        final_loss,
    })
}

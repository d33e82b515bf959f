//! One meta-gradient step: every episode in the batch runs forward and
//! backward on its own tape, gradients reduce in episode index order, and the
//! update is plain SGD over all parameters.

use hypergen_episode::Episode;
use hypergen_model::{accuracy, episode_loss, Generator};
use hypergen_tensor::{Real, Tape, Tensor};

use crate::error::TrainError;

/// Query-set statistics of one update, averaged over the meta batch.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss: f64,
    pub accuracy: f64,
    /// L2 norm of the averaged gradient; a cheap stall/explosion telltale.
    pub grad_norm: f64,
}

/// Casts episode images to the model scalar and splits out the label views
/// the generator expects.
pub fn episode_tensors<S: Real>(
    episode: &Episode,
) -> (Vec<Tensor<S>>, Vec<Option<usize>>, Vec<Tensor<S>>, Vec<usize>) {
    let support = episode.support.iter().map(|s| s.image.cast()).collect();
    let support_labels = episode.support.iter().map(|s| s.label).collect();
    let query = episode.query.iter().map(|q| q.image.cast()).collect();
    let query_labels = episode.query.iter().map(|q| q.label).collect();
    (support, support_labels, query, query_labels)
}

/// Runs one SGD step over `episodes` and returns batch statistics. A zero
/// learning rate leaves every parameter bitwise untouched. Non-finite losses
/// or gradients abort with a diagnostic naming the episode or parameter.
pub fn meta_step<S: Real>(
    generator: &mut Generator<S>,
    episodes: &[Episode],
    lr: f64,
) -> Result<StepStats, TrainError> {
    if episodes.is_empty() {
        return Err(TrainError::config("meta_step needs at least one episode"));
    }
    let names: Vec<String> = generator
        .params
        .iter()
        .map(|(n, _)| n.to_string())
        .collect();
    let mut acc: Vec<Option<Tensor<S>>> = (0..names.len()).map(|_| None).collect();
    let mut loss_sum = 0.0;
    let mut acc_sum = 0.0;
    for (i, episode) in episodes.iter().enumerate() {
        let (support, support_labels, query, query_labels) = episode_tensors::<S>(episode);
        let mut tape = Tape::new();
        let bound = generator.params.bind(&mut tape);
        let (loss_tid, fwd) = episode_loss(
            &mut tape,
            generator,
            &bound,
            &support,
            &support_labels,
            &query,
            &query_labels,
        )?;
        let loss = tape.value(loss_tid).item()?.as_f64();
        if !loss.is_finite() {
            return Err(TrainError::Numeric(format!(
                "episode {} (seed {}) produced query loss {}",
                i, episode.seed, loss
            )));
        }
        loss_sum += loss;
        acc_sum += accuracy(tape.value(fwd.logits), &query_labels);
        let mut grads = tape.backward(loss_tid)?;
        for (j, &tid) in bound.tids().iter().enumerate() {
            if let Some(g) = grads.take(tid) {
                match &mut acc[j] {
                    Some(total) => {
                        for (t, &v) in total.data_mut().iter_mut().zip(g.data()) {
                            *t += v;
                        }
                    }
                    slot => *slot = Some(g),
                }
            }
        }
    }
    let scale = 1.0 / episodes.len() as f64;
    let scale_s = S::from_f64(scale);
    let mut sq = 0.0;
    for (j, slot) in acc.iter_mut().enumerate() {
        if let Some(g) = slot {
            for v in g.data_mut() {
                *v *= scale_s;
                let x = v.as_f64();
                sq += x * x;
            }
            if !g.is_finite() {
                return Err(TrainError::Numeric(format!(
                    "gradient for {:?} is not finite",
                    names[j]
                )));
            }
        }
    }
    if lr != 0.0 {
        let step_s = S::from_f64(lr);
        for (param, slot) in generator.params.values_mut().zip(&acc) {
            if let Some(g) = slot {
                for (p, &gv) in param.data_mut().iter_mut().zip(g.data()) {
                    *p = *p - step_s * gv;
                }
            }
        }
    }
    Ok(StepStats {
        loss: loss_sum * scale,
        accuracy: acc_sum * scale,
        grad_norm: sq.sqrt(),
    })
}

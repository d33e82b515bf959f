//! Episode evaluation with normal-approximation confidence intervals.

use hypergen_episode::{sample_episode, DatasetIndex, Episode};
use hypergen_model::{accuracy, episode_forward, Generator, ModelError};
use hypergen_tensor::{Real, Tape, Tensor};
use serde::Serialize;

use crate::config::EpisodeShape;
use crate::error::TrainError;
use crate::seeds::{derive_seed, SALT_EVAL};
use crate::step::episode_tensors;

/// Anything that can score an episode's query set. The trained generator is
/// the production implementation; tests substitute stubs.
pub trait QueryModel<S: Real> {
    /// Returns [n_query, n_way] logits for the episode's query images.
    fn query_logits(&self, episode: &Episode) -> Result<Tensor<S>, TrainError>;
}

impl<S: Real> QueryModel<S> for Generator<S> {
    fn query_logits(&self, episode: &Episode) -> Result<Tensor<S>, TrainError> {
        let (support, support_labels, query, _) = episode_tensors::<S>(episode);
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let (_, fwd) = episode_forward(
            &mut tape,
            self,
            &bound,
            &support,
            &support_labels,
            &query,
            false,
        )?;
        Ok(tape.value(fwd.logits).clone())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub accuracy: f64,
    pub loss: f64,
    /// Episode label -> dataset class id, kept for split audits.
    pub class_map: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub records: Vec<EpisodeRecord>,
}

/// 1.96 * sample standard deviation / sqrt(n); zero below two values.
pub fn confidence95(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    1.96 * var.sqrt() / (n as f64).sqrt()
}

impl EvalReport {
    pub fn from_records(records: Vec<EpisodeRecord>) -> EvalReport {
        let accs: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
        let mean = if accs.is_empty() {
            0.0
        } else {
            accs.iter().sum::<f64>() / accs.len() as f64
        };
        EvalReport {
            episodes: records.len(),
            mean_accuracy: mean,
            ci95: confidence95(&accs),
            records,
        }
    }
}

fn mean_cross_entropy<S: Real>(logits: &Tensor<S>, labels: &[usize]) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let ce = tape.cross_entropy(l, labels).map_err(ModelError::from)?;
    Ok(tape.value(ce).item().map_err(ModelError::from)?.as_f64())
}

/// Scores `n_episodes` fresh episodes from `index`. Episode j samples with a
/// seed derived from (seed, j), so a report is reproducible from the
/// arguments alone.
pub fn evaluate<S: Real, M: QueryModel<S>>(
    model: &M,
    index: &DatasetIndex,
    shape: EpisodeShape,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport, TrainError> {
    let mut records = Vec::with_capacity(n_episodes);
    for j in 0..n_episodes {
        let ep_seed = derive_seed([seed, SALT_EVAL, j as u64, 0]);
        let episode = sample_episode(
            index,
            shape.n_way,
            shape.k_shot,
            shape.q_query,
            shape.u_unlabeled,
            ep_seed,
        )?;
        let logits = model.query_logits(&episode)?;
        let labels: Vec<usize> = episode.query.iter().map(|q| q.label).collect();
        records.push(EpisodeRecord {
            seed: ep_seed,
            accuracy: accuracy(&logits, &labels),
            loss: mean_cross_entropy(&logits, &labels)?,
            class_map: episode.class_map.clone(),
        });
    }
    Ok(EvalReport::from_records(records))
}

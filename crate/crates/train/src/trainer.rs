//! The training loop: deterministic episode streams, periodic evaluation,
//! rolling checkpoints, and resumable metrics.
//!
//! Every source of randomness is derived from (config seed, purpose, step,
//! index), so a run resumed from any checkpoint continues bitwise identically
//! to one that never stopped. Episode passes run sequentially on the calling
//! thread; gradients reduce in episode index order, which is the order any
//! parallel driver would also have to preserve.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use hypergen_episode::{mask_unlabeled, sample_episode, unlabeled_keep_probability, DatasetIndex, Episode};
use hypergen_model::Generator;
use hypergen_tensor::Real;

use crate::config::TrainConfig;
use crate::error::TrainError;
use crate::eval::{evaluate, EvalReport};
use crate::metrics::{MetricsRow, MetricsWriter};
use crate::seeds::{derive_seed, SALT_EPISODE, SALT_EVAL, SALT_MASK};
use crate::step::meta_step;

pub const CHECKPOINT_FILE: &str = "checkpoint.hgw1";

#[derive(Debug)]
pub struct TrainOutcome {
    pub final_step: usize,
    pub checkpoint: PathBuf,
    /// Report of the last in-run evaluation, if the cadence produced any.
    pub last_eval: Option<EvalReport>,
}

/// Draws the i-th episode of (0-based) training step `step`, applying the
/// unlabeled-sample mask ramp when the run is semi-supervised. Pure function
/// of (config, index, step, i).
pub fn training_episode(
    config: &TrainConfig,
    index: &DatasetIndex,
    step: usize,
    i: usize,
) -> Result<Episode, TrainError> {
    let episode = sample_episode(
        index,
        config.n_way,
        config.k_shot,
        config.q_query,
        config.u_unlabeled,
        derive_seed([config.seed, SALT_EPISODE, step as u64, i as u64]),
    )?;
    if !config.semi_supervised {
        return Ok(episode);
    }
    let keep = unlabeled_keep_probability(step, config.total_steps);
    Ok(mask_unlabeled(
        &episode,
        keep,
        derive_seed([config.seed, SALT_MASK, step as u64, i as u64]),
    ))
}

fn check_disjoint(train: &DatasetIndex, eval: &DatasetIndex) -> Result<(), TrainError> {
    let names: HashSet<&str> = train.classes.iter().map(|c| c.name.as_str()).collect();
    if let Some(shared) = eval.classes.iter().find(|c| names.contains(c.name.as_str())) {
        return Err(TrainError::config(format!(
            "train and eval splits share class {:?}; evaluation needs classes unseen in training",
            shared.name
        )));
    }
    Ok(())
}

/// Runs steps `start_step..config.total_steps`, writing metrics and a rolling
/// checkpoint into `out_dir`. `start_step` is 0 for a fresh run or the step
/// recorded in the checkpoint the `generator` was restored from; metric rows
/// past that step are truncated so the continued files match an
/// uninterrupted run byte for byte.
pub fn train<S: Real>(
    generator: &mut Generator<S>,
    config: &TrainConfig,
    train_index: &DatasetIndex,
    eval_index: &DatasetIndex,
    out_dir: &Path,
    start_step: usize,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if generator.config.n_way != config.n_way {
        return Err(TrainError::config(format!(
            "generator is {}-way but the training config asks for {}-way episodes",
            generator.config.n_way, config.n_way
        )));
    }
    if start_step > config.total_steps {
        return Err(TrainError::config(format!(
            "resume step {} is past total_steps {}",
            start_step, config.total_steps
        )));
    }
    check_disjoint(train_index, eval_index)?;
    std::fs::create_dir_all(out_dir).map_err(|e| TrainError::io(out_dir.display(), e))?;
    let mut metrics = if start_step == 0 {
        MetricsWriter::create(out_dir)?
    } else {
        MetricsWriter::resume(out_dir, start_step)?
    };
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let mut last_eval = None;
    for step in start_step..config.total_steps {
        let lr = config.lr(step);
        let episodes: Vec<Episode> = (0..config.meta_batch)
            .map(|i| training_episode(config, train_index, step, i))
            .collect::<Result<_, _>>()?;
        let stats = meta_step(generator, &episodes, lr).map_err(|e| match e {
            TrainError::Numeric(d) => TrainError::Numeric(format!("step {}: {}", step + 1, d)),
            other => other,
        })?;
        let done = step + 1;
        let eval_due = config.eval_every > 0 && done % config.eval_every == 0;
        let (mut test_acc, mut ci95) = (None, None);
        if eval_due {
            let report = evaluate(
                &*generator,
                eval_index,
                config.shape(),
                config.eval_episodes,
                derive_seed([config.seed, SALT_EVAL, done as u64, 0]),
            )?;
            test_acc = Some(report.mean_accuracy);
            ci95 = Some(report.ci95);
            last_eval = Some(report);
        }
        if eval_due || (config.log_every > 0 && done % config.log_every == 0) {
            metrics.append(&MetricsRow {
                step: done,
                lr,
                train_loss: stats.loss,
                train_acc: stats.accuracy,
                test_acc,
                ci95,
            })?;
        }
        let checkpoint_due = done == config.total_steps
            || (config.checkpoint_every > 0 && done % config.checkpoint_every == 0);
        if checkpoint_due {
            generator.save(
                &checkpoint,
                serde_json::json!({ "step": done, "train_config": config }),
            )?;
        }
    }
    Ok(TrainOutcome {
        final_step: config.total_steps,
        checkpoint,
        last_eval,
    })
}

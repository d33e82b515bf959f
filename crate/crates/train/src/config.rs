use serde::{Deserialize, Serialize};

use crate::error::TrainError;

/// Steps between multiplicative learning-rate decays.
pub const DECAY_EVERY: usize = 100_000;

/// Episode shape shared by training and evaluation sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeShape {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub u_unlabeled: usize,
}

/// Meta-training settings. CLI flags mirror these fields one to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Initial learning rate; multiplied by `decay` every [`DECAY_EVERY`]
    /// steps.
    pub lr0: f64,
    pub decay: f64,
    pub total_steps: usize,
    /// Episodes averaged into each gradient update.
    pub meta_batch: usize,
    pub seed: u64,
    /// Evaluate on the eval split every this many steps; 0 disables.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Rewrite the rolling checkpoint every this many steps; the final step
    /// always writes one. 0 means final only.
    pub checkpoint_every: usize,
    /// Emit a metrics row every this many steps; eval steps always emit.
    pub log_every: usize,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    /// Unlabeled support samples per class, drawn only when `semi_supervised`.
    pub u_unlabeled: usize,
    pub semi_supervised: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.02,
            decay: 0.95,
            total_steps: 1000,
            meta_batch: 8,
            seed: 0,
            eval_every: 500,
            eval_episodes: 100,
            checkpoint_every: 500,
            log_every: 50,
            n_way: 5,
            k_shot: 1,
            q_query: 5,
            u_unlabeled: 0,
            semi_supervised: false,
        }
    }
}

impl TrainConfig {
    /// lr(step) = lr0 * decay^floor(step / DECAY_EVERY), steps counted from 0.
    pub fn lr(&self, step: usize) -> f64 {
        self.lr0 * self.decay.powi((step / DECAY_EVERY) as i32)
    }

    pub fn shape(&self) -> EpisodeShape {
        EpisodeShape {
            n_way: self.n_way,
            k_shot: self.k_shot,
            q_query: self.q_query,
            u_unlabeled: self.u_unlabeled,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.lr0.is_finite() || self.lr0 < 0.0 {
            return Err(TrainError::config(format!(
                "lr0 must be finite and non-negative, got {}",
                self.lr0
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(TrainError::config(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if self.total_steps == 0 {
            return Err(TrainError::config("total_steps must be >= 1"));
        }
        if self.meta_batch == 0 {
            return Err(TrainError::config("meta_batch must be >= 1"));
        }
        if self.n_way < 2 {
            return Err(TrainError::config(format!(
                "episodes need n_way >= 2, got {}",
                self.n_way
            )));
        }
        if self.k_shot == 0 || self.q_query == 0 {
            return Err(TrainError::config(format!(
                "episodes need k_shot >= 1 and q_query >= 1, got k={} q={}",
                self.k_shot, self.q_query
            )));
        }
        if self.semi_supervised && self.u_unlabeled == 0 {
            return Err(TrainError::config(
                "semi-supervised training needs u_unlabeled >= 1",
            ));
        }
        if !self.semi_supervised && self.u_unlabeled != 0 {
            return Err(TrainError::config(
                "u_unlabeled is set but semi_supervised is off",
            ));
        }
        Ok(())
    }
}

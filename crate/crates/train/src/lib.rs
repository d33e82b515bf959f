//! Meta-training for the weight generator.
//!
//! Each step samples a batch of episodes, runs the generator and the
//! generated CNN on every episode's own tape, backpropagates the query-set
//! cross entropy into all trainable parameters (transformers, embedders,
//! label codebook, learned CNN layers), and applies plain SGD with the
//! gradient averaged over the batch. The learning rate decays by a fixed
//! factor every [`DECAY_EVERY`] steps.
//!
//! All randomness is derived statelessly from (run seed, purpose, step,
//! index) (see [`derive_seed`]), which makes the episode stream, the
//! unlabeled-sample masking ramp, and in-run evaluations a pure function of
//! the config. Resuming from a checkpoint therefore continues bitwise
//! identically to a run that never stopped, and the [`MetricsWriter`] CSV /
//! JSONL streams end up byte-identical.

mod config;
mod error;
mod eval;
mod metrics;
mod seeds;
mod step;
mod trainer;

pub use config::{EpisodeShape, TrainConfig, DECAY_EVERY};
pub use error::TrainError;
pub use eval::{confidence95, evaluate, EpisodeRecord, EvalReport, QueryModel};
pub use metrics::{MetricsRow, MetricsWriter, CSV_HEADER};
pub use seeds::{derive_seed, SALT_EPISODE, SALT_EVAL, SALT_MASK};
pub use step::{episode_tensors, meta_step, StepStats};
pub use trainer::{train, training_episode, TrainOutcome, CHECKPOINT_FILE};

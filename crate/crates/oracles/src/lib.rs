//! Closed-form reference learners used as independent checks on the
//! transformer weight-generation path.
//!
//! Each oracle is a direct, loop-level implementation of a construction the
//! generator is supposed to be able to represent: a one-step logits update,
//! a hand-wired attention layer that averages per-class embeddings, a
//! two-layer propagation scheme for partially labeled episodes, and an ODE
//! integrator that tracks a local minimum across a task curve. None of them
//! share code with the trainable model, so agreement between the two paths
//! is evidence rather than tautology.

mod attention;
mod logits;
mod semi;
pub mod suites;
mod tracking;

pub use attention::{
    construct_attention_generator, construct_attention_generator_two_head, AttentionGenerator,
    AttentionHead, OracleCodebook,
};
pub use logits::{one_step_gd_logits, LogitsUpdate};
pub use semi::{semi_supervised_propagation, PropagationReport};
pub use suites::{run_suite, run_suites, PropertyReport, SuiteReport, SUITE_NAMES};
pub use tracking::{
    newton_minimize, ode_track, LogisticFamily, LossFamily, QuadraticFamily, TaskCurve,
};

/// Errors from oracle construction or minimum tracking.
#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("invalid oracle input: {0}")]
    Invalid(String),
    #[error("minimum tracking failed at gamma={gamma:.4}: {detail}")]
    Tracking { gamma: f64, detail: String },
}

impl OracleError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        OracleError::Invalid(msg.into())
    }
}

//! Per-candidate subagents behind a common interface: sample an action,
//! evaluate Q(s, a), learn from a batch.
//!
//! Three backends: exact value iteration ([`ViSubagent`]), tabular
//! off-policy Q-learning ([`TabularSubagent`]) and a small
//! entropy-regularized actor-critic ([`DiscreteAcSubagent`],
//! [`ContinuousAcSubagent`]) with target networks and closed-form backprop.
//!
//! One subagent is single-writer; the k subagents of a run may update in
//! parallel once the shared action has been chosen.

mod ac;
mod checkpoint;
mod mlp;
mod qtable;
mod replay;

pub use ac::{ContinuousAcSubagent, DiscreteAcSubagent};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointBody, CheckpointError, AGENT_HEADER,
};
pub use mlp::{Adam, Mlp};
pub use qtable::{greedy_rollout, tabular_update, value_iteration, QTable, TabularSubagent, ViSubagent};
pub use replay::{push_shared, ReplayBuffer};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One stored experience. The reward is specific to the owning candidate;
/// `terminal` is the environment's episode-end flag (real-goal arrival) and
/// is identical across the k buffers fed by one interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<S, A> {
    pub s: S,
    pub a: A,
    pub s_next: S,
    pub reward: f64,
    pub terminal: bool,
}

/// Diagnostics from one learning call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LearnStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub entropy: f64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("value iteration supports discrete scenarios only")]
    UnsupportedMode,
    #[error(
        "training diverged{}: critic loss {critic_loss}, actor loss {actor_loss}",
        episode.map(|e| format!(" at episode {e}")).unwrap_or_default()
    )]
    Divergence {
        episode: Option<usize>,
        critic_loss: f64,
        actor_loss: f64,
    },
}

impl TrainError {
    pub fn at_episode(self, episode: usize) -> Self {
        match self {
            TrainError::Divergence {
                critic_loss,
                actor_loss,
                ..
            } => TrainError::Divergence {
                episode: Some(episode),
                critic_loss,
                actor_loss,
            },
            other => other,
        }
    }
}

/// Actor-critic hyperparameters. `discrete()` and `continuous()` pick the
/// mode-matched entropy coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcConfig {
    pub gamma: f64,
    pub lr: f64,
    pub alpha: f64,
    pub rho: f64,
    pub minibatch: usize,
    pub horizon: usize,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
}

impl Default for AcConfig {
    fn default() -> Self {
        Self::discrete()
    }
}

impl AcConfig {
    pub fn discrete() -> Self {
        AcConfig {
            gamma: 0.99,
            lr: 3e-4,
            alpha: 0.2,
            rho: 0.01,
            minibatch: 100,
            horizon: 4000,
            hidden: vec![64, 64],
            replay_capacity: 1_000_000,
        }
    }

    pub fn continuous() -> Self {
        AcConfig {
            alpha: 0.01,
            ..Self::discrete()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("gamma", self.gamma),
            ("lr", self.lr),
            ("rho", self.rho),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(format!("ac.{name} must be positive, got {v}"));
            }
        }
        if self.alpha < 0.0 {
            return Err(format!("ac.alpha must be nonnegative, got {}", self.alpha));
        }
        if self.gamma >= 1.0 {
            return Err(format!("ac.gamma must be below 1, got {}", self.gamma));
        }
        if self.minibatch == 0 || self.horizon == 0 || self.replay_capacity == 0 {
            return Err("ac.minibatch, ac.horizon and ac.replay_capacity must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err("ac.hidden must list positive layer widths".into());
        }
        Ok(())
    }
}

/// Common subagent interface. `greedy_action` is the exploitation policy
/// (argmax with lowest-index tie-break for tables, the squashed mean for the
/// continuous actor); `sample_action` is the stochastic policy used to form
/// candidate action sets.
pub trait Subagent {
    type State: Copy;
    type Action: Copy + PartialEq;

    fn sample_action(&self, s: Self::State, rng: &mut dyn RngCore) -> Self::Action;
    fn greedy_action(&self, s: Self::State) -> Self::Action;
    fn q_value(&self, s: Self::State, a: Self::Action) -> f64;
    fn learn(
        &mut self,
        batch: &[Transition<Self::State, Self::Action>],
        rng: &mut dyn RngCore,
    ) -> Result<LearnStats, TrainError>;
    /// Replay batch size this backend expects per update step.
    fn learn_batch_size(&self) -> usize;
}

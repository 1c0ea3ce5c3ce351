//! ε-greedy TD(0) Q-learning around the DQN, and the supervised baseline.

mod dqn;
mod sdl;

pub use dqn::{dqn_train_step, train_rl, RenderCache, Rendered, StateKey, StateView};
pub use sdl::train_sdl;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Reward;
use crate::error::{Error, Result};
use crate::numerics::AdamConfig;

/// Fraction of all environment steps over which ε decays to its floor.
pub const EPSILON_DECAY_FRACTION: f64 = 0.8;

/// Every training constant in one validated record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub epsilon0: f64,
    pub epsilon_min: f64,
    /// Per-step multiplicative ε decay. `None` derives it so that ε reaches
    /// `epsilon_min` after [`EPSILON_DECAY_FRACTION`] of all steps.
    pub epsilon_decay: Option<f64>,
    pub gamma: f64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub memory_capacity: usize,
    pub batch_size: usize,
    pub alpha_overlay: f32,
    pub seed: u64,
    pub sdl_epochs: usize,
    /// Draw a fresh image at every step instead of once per episode.
    pub per_step_image: bool,
    /// Treat the last step of an episode as terminal (target = reward).
    pub terminal_last_step: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            epsilon0: 0.7,
            epsilon_min: 1e-4,
            epsilon_decay: None,
            gamma: 0.99,
            lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            episodes: 300,
            steps_per_episode: 5,
            memory_capacity: 1500,
            batch_size: 32,
            alpha_overlay: 0.1,
            seed: 7,
            sdl_epochs: 300,
            per_step_image: false,
            terminal_last_step: false,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.epsilon_min > 0.0 && self.epsilon_min <= self.epsilon0 && self.epsilon0 <= 1.0) {
            return bad(format!(
                "need 0 < epsilon_min ({}) <= epsilon0 ({}) <= 1",
                self.epsilon_min, self.epsilon0
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if let Some(d) = self.epsilon_decay {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("epsilon_decay {d} outside (0, 1]"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.alpha_overlay > 0.0 && self.alpha_overlay < 1.0) {
            return bad(format!("alpha_overlay {} outside (0, 1)", self.alpha_overlay));
        }
        let counts = [
            ("episodes", self.episodes),
            ("steps_per_episode", self.steps_per_episode),
            ("memory_capacity", self.memory_capacity),
            ("batch_size", self.batch_size),
            ("sdl_epochs", self.sdl_epochs),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.episodes * self.steps_per_episode
    }

    pub fn resolved_epsilon_decay(&self) -> f64 {
        self.epsilon_decay.unwrap_or_else(|| {
            let steps = (EPSILON_DECAY_FRACTION * self.total_steps() as f64).round().max(1.0);
            (self.epsilon_min / self.epsilon0).powf(1.0 / steps)
        })
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// `max(epsilon_min, epsilon0 · decay^step)`.
pub fn epsilon_schedule(global_step: u64, h: &Hyperparams) -> f64 {
    let decay = h.resolved_epsilon_decay();
    let exponent = i32::try_from(global_step).unwrap_or(i32::MAX);
    (h.epsilon0 * decay.powi(exponent)).max(h.epsilon_min)
}

/// Greedy action; ties go to action 0.
pub fn greedy_action(q: (f64, f64)) -> usize {
    usize::from(q.1 > q.0)
}

/// With probability `epsilon` a uniformly random action, else the greedy one.
pub fn select_action<R: Rng + ?Sized>(q: (f64, f64), epsilon: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..2)
    } else {
        greedy_action(q)
    }
}

/// Bellman target `r + γ · max_a Q(s', a)`.
pub fn td0_target(reward: Reward, next_q: (f64, f64), gamma: f64) -> f64 {
    f64::from(reward.value()) + gamma * next_q.0.max(next_q.1)
}

/// One row per completed episode (RL) or epoch (supervised).
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRow {
    pub episode: usize,
    pub epsilon: Option<f64>,
    pub mean_reward: Option<f64>,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Mean training loss over the updates made in this episode, if any.
    pub loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingRecord {
    pub rows: Vec<EpisodeRow>,
    /// Environment steps taken (RL) or samples seen (supervised).
    pub total_steps: u64,
    pub transitions_pushed: u64,
}

impl TrainingRecord {
    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.rows.last().map(|r| r.test_acc)
    }

    pub fn final_train_accuracy(&self) -> Option<f64> {
        self.rows.last().map(|r| r.train_acc)
    }
}

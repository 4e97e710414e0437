//! Clipped-surrogate PPO.

mod buffer;
mod gae;
mod loss;
mod trainer;

pub use buffer::{Minibatch, RolloutBuffer};
pub use gae::compute_gae;
pub use loss::{loss_gradient, ppo_loss, standardize, LossComponents, LossTerm};
pub use trainer::{IterationReport, Metrics, Trainer, TrainerConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Steps collected per environment per iteration.
    pub horizon: usize,
    pub n_envs: usize,
    /// Learning rate when no scheduler drives it, and the scheduler's starting point otherwise.
    pub learning_rate: f64,
    /// Global gradient-norm clip; `0` disables it.
    pub max_grad_norm: f64,
    /// Multiplies rewards before advantage estimation. Logged returns stay unscaled.
    pub reward_scale: f64,
    pub adam: AdamConfig,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            entropy_coef: 0.0,
            value_coef: 0.5,
            epochs: 10,
            minibatch_size: 64,
            horizon: 2048,
            n_envs: 1,
            learning_rate: 3e-4,
            max_grad_norm: 0.5,
            reward_scale: 0.01,
            adam: AdamConfig::default(),
        }
    }
}

impl PpoConfig {
    pub fn batch_size(&self) -> usize {
        self.horizon * self.n_envs
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if x > 0.0 && x <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("ppo.{name} must lie in (0, 1], got {x}")))
            }
        };
        unit("gamma", self.gamma)?;
        unit("gae_lambda", self.gae_lambda)?;
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon.is_finite()) {
            return Err(Error::InvalidConfig("ppo.clip_epsilon must be positive".into()));
        }
        for (name, x) in [
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("learning_rate", self.learning_rate),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::InvalidConfig(format!("ppo.{name} must be non-negative, got {x}")));
            }
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return Err(Error::InvalidConfig(format!("ppo.reward_scale must be positive, got {}", self.reward_scale)));
        }
        if self.epochs == 0 || self.horizon == 0 || self.n_envs == 0 || self.minibatch_size == 0 {
            return Err(Error::InvalidConfig(
                "ppo.epochs, horizon, n_envs and minibatch_size must be positive".into(),
            ));
        }
        if !self.batch_size().is_multiple_of(self.minibatch_size) {
            return Err(Error::InvalidConfig(format!(
                "ppo.minibatch_size {} does not divide horizon * n_envs = {}",
                self.minibatch_size,
                self.batch_size()
            )));
        }
        Ok(())
    }
}

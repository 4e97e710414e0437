use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gae::compute_gae;
use crate::env::{Observation, ACT_DIM};

/// Transitions of one iteration, stored time-major: index `t * n_envs + e`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RolloutBuffer {
    pub horizon: usize,
    pub n_envs: usize,
    pub observations: Vec<Observation>,
    pub actions: Vec<[f64; ACT_DIM]>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Critic value of the state after the last transition, per environment.
    pub last_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Owned slice of a rollout used for one gradient step.
#[derive(Debug, Clone, Default)]
pub struct Minibatch {
    pub observations: Vec<Observation>,
    pub actions: Vec<[f64; ACT_DIM]>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Fills `advantages` and `returns` column by column.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        let n = self.len();
        self.advantages = vec![0.0; n];
        self.returns = vec![0.0; n];
        for e in 0..self.n_envs {
            let idx: Vec<usize> = (0..self.horizon).map(|t| t * self.n_envs + e).collect();
            let r: Vec<f64> = idx.iter().map(|&i| self.rewards[i]).collect();
            let v: Vec<f64> = idx.iter().map(|&i| self.values[i]).collect();
            let d: Vec<bool> = idx.iter().map(|&i| self.dones[i]).collect();
            let (adv, ret) = compute_gae(&r, &v, &d, self.last_values[e], gamma, lambda);
            for (k, &i) in idx.iter().enumerate() {
                self.advantages[i] = adv[k];
                self.returns[i] = ret[k];
            }
        }
    }

    pub fn gather(&self, indices: &[usize]) -> Minibatch {
        Minibatch {
            observations: indices.iter().map(|&i| self.observations[i]).collect(),
            actions: indices.iter().map(|&i| self.actions[i]).collect(),
            old_log_probs: indices.iter().map(|&i| self.log_probs[i]).collect(),
            advantages: indices.iter().map(|&i| self.advantages[i]).collect(),
            returns: indices.iter().map(|&i| self.returns[i]).collect(),
        }
    }

    /// A fresh random partition of the buffer into minibatches.
    pub fn shuffled_minibatches(&self, size: usize, rng: &mut impl Rng) -> Vec<Minibatch> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        order.chunks(size).map(|c| self.gather(c)).collect()
    }
}

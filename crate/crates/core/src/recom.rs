//! Retrospective cost learning-rate adaptation.
//!
//! Every completed episode contributes a pair `(R[t], L[t])`: its undiscounted
//! return and the total PPO loss of the update that consumed it. With `N`
//! recorded pairs and window `T`,
//!
//! ```text
//! C_ret  = 1/T * sum_{t=N-T+1}^{N}   (-R[t] + L[t])
//! C_prev = 1/T * sum_{t=N-T}^{N-1}   (-R[t] + L[t])
//! G      = C_ret - C_prev
//! lr    <- clamp(lr - gain * G, lr_min, lr_max)
//! ```
//!
//! The update fires on the first call at or after each multiple of
//! `update_period` environment timesteps. A falling cost raises the learning
//! rate, a rising cost lowers it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

/// How the previous window is placed relative to the current one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Previous window is the current one shifted back by a single entry.
    #[default]
    Shifted,
    /// Previous window is the `T` entries immediately before the current one.
    Disjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("need {needed} recorded episodes, have {available}")]
pub struct InsufficientHistory {
    pub needed: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecomConfig {
    /// Retrospective window `T`, in episodes.
    pub window: usize,
    pub gain: f64,
    /// Environment timesteps between learning-rate updates.
    pub update_period: u64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub window_mode: WindowMode,
}

impl Default for RecomConfig {
    fn default() -> Self {
        Self {
            window: 10,
            gain: 5e-6,
            update_period: 40_000,
            lr_min: 1e-6,
            lr_max: 1e-2,
            window_mode: WindowMode::Shifted,
        }
    }
}

impl RecomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidConfig("recom.window must be at least 1".into()));
        }
        if self.update_period == 0 {
            return Err(Error::InvalidConfig("recom.update_period must be positive".into()));
        }
        if !(self.gain.is_finite() && self.gain >= 0.0) {
            return Err(Error::InvalidConfig("recom.gain must be non-negative".into()));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "recom learning-rate bounds [{}, {}] are invalid",
                self.lr_min, self.lr_max
            )));
        }
        Ok(())
    }

    /// Episodes needed before an update can be computed.
    pub fn history_needed(&self) -> usize {
        match self.window_mode {
            WindowMode::Shifted => self.window + 1,
            WindowMode::Disjoint => 2 * self.window,
        }
    }
}

fn window_mean(rewards: &[f64], losses: &[f64], start: usize, len: usize) -> f64 {
    let sum: f64 = rewards[start..start + len]
        .iter()
        .zip(&losses[start..start + len])
        .map(|(r, l)| -r + l)
        .sum();
    sum / len as f64
}

fn check_aligned(rewards: &[f64], losses: &[f64]) {
    assert_eq!(rewards.len(), losses.len(), "reward and loss streams must be aligned");
}

/// Mean of `-R + L` over the last `window` entries.
pub fn retrospective_cost(rewards: &[f64], losses: &[f64], window: usize) -> Result<f64, InsufficientHistory> {
    check_aligned(rewards, losses);
    let n = rewards.len();
    if window == 0 || n < window {
        return Err(InsufficientHistory {
            needed: window.max(1),
            available: n,
        });
    }
    Ok(window_mean(rewards, losses, n - window, window))
}

/// Mean of `-R + L` over the last `window` entries, shifted back by one.
pub fn previous_cost(rewards: &[f64], losses: &[f64], window: usize) -> Result<f64, InsufficientHistory> {
    previous_cost_with(rewards, losses, window, WindowMode::Shifted)
}

pub fn previous_cost_with(
    rewards: &[f64],
    losses: &[f64],
    window: usize,
    mode: WindowMode,
) -> Result<f64, InsufficientHistory> {
    check_aligned(rewards, losses);
    let n = rewards.len();
    let shift = match mode {
        WindowMode::Shifted => 1,
        WindowMode::Disjoint => window,
    };
    if window == 0 || n < window + shift {
        return Err(InsufficientHistory {
            needed: window.max(1) + shift,
            available: n,
        });
    }
    Ok(window_mean(rewards, losses, n - window - shift, window))
}

pub fn cost_gradient(c_ret: f64, c_prev: f64) -> f64 {
    c_ret - c_prev
}

/// One learning-rate adjustment, as logged to `recom.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecomUpdate {
    pub global_step: u64,
    pub c_ret: f64,
    pub c_prev: f64,
    pub g_cost: f64,
    pub lr_before: f64,
    pub lr_after: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateOutcome {
    /// No update-period boundary crossed since the last call.
    NotDue,
    /// A boundary was crossed but the history is too short; the boundary is consumed.
    Skipped(InsufficientHistory),
    Updated(RecomUpdate),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecomState {
    pub config: RecomConfig,
    pub rewards: Vec<f64>,
    pub losses: Vec<f64>,
    pub lr: f64,
    /// Index of the last update-period boundary that was acted on.
    pub last_boundary: u64,
}

impl RecomState {
    pub fn new(config: RecomConfig, initial_lr: f64) -> Result<Self> {
        config.validate()?;
        if !(initial_lr >= config.lr_min && initial_lr <= config.lr_max) {
            return Err(Error::InvalidConfig(format!(
                "initial learning rate {initial_lr} outside [{}, {}]",
                config.lr_min, config.lr_max
            )));
        }
        Ok(Self {
            config,
            rewards: Vec::new(),
            losses: Vec::new(),
            lr: initial_lr,
            last_boundary: 0,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Appends one completed episode's return together with its loss tag.
    pub fn record(&mut self, episode_return: f64, loss: f64) -> Result<()> {
        if !(episode_return.is_finite() && loss.is_finite()) {
            return Err(Error::NonFinite("recom stream entry"));
        }
        self.rewards.push(episode_return);
        self.losses.push(loss);
        Ok(())
    }

    /// `(C_ret, C_prev)` for the current history.
    pub fn costs(&self) -> Result<(f64, f64), InsufficientHistory> {
        let t = self.config.window;
        let c_ret = retrospective_cost(&self.rewards, &self.losses, t)?;
        let c_prev = previous_cost_with(&self.rewards, &self.losses, t, self.config.window_mode)?;
        Ok((c_ret, c_prev))
    }

    pub fn update_lr(&mut self, global_step: u64) -> UpdateOutcome {
        let boundary = global_step / self.config.update_period;
        if boundary <= self.last_boundary {
            return UpdateOutcome::NotDue;
        }
        self.last_boundary = boundary;
        let (c_ret, c_prev) = match self.costs() {
            Ok(c) => c,
            Err(e) => return UpdateOutcome::Skipped(e),
        };
        let g_cost = cost_gradient(c_ret, c_prev);
        let lr_before = self.lr;
        let raw = lr_before - self.config.gain * g_cost;
        let lr_after = raw.clamp(self.config.lr_min, self.config.lr_max);
        self.lr = lr_after;
        UpdateOutcome::Updated(RecomUpdate {
            global_step,
            c_ret,
            c_prev,
            g_cost,
            lr_before,
            lr_after,
            clamped: lr_after != raw,
        })
    }
}

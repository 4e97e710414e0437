//! Dormant-unit diagnostics.
//!
//! A hidden unit's score is its mean absolute activation over a probe batch,
//! divided by the mean of that quantity across its layer. Units scoring at or
//! below `tau` are dormant.

use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::{Mlp, NetworkParams};

pub const DEFAULT_TAU: f64 = 0.025;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DormantConfig {
    pub tau: f64,
    pub probe_size: usize,
}

impl Default for DormantConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            probe_size: 512,
        }
    }
}

impl DormantConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::InvalidConfig("plasticity.tau must be non-negative".into()));
        }
        if self.probe_size == 0 {
            return Err(Error::InvalidConfig("plasticity.probe_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DormantReport {
    pub global_step: u64,
    pub tau: f64,
    pub dormant_per_layer: Vec<usize>,
    pub total_units: usize,
    pub dormant_ratio: f64,
    pub probe_batch_size: usize,
    /// Normalized score of every unit, layer by layer.
    pub scores: Vec<Vec<f64>>,
}

/// Mean absolute activation of every hidden unit over `probe`, layer by layer.
pub fn mean_abs_activations(mlp: &Mlp, probe: &[Observation]) -> Vec<Vec<f64>> {
    let widths = [mlp.layers[0].n_out, mlp.layers[1].n_out];
    let mut sums: Vec<Vec<f64>> = widths.iter().map(|w| vec![0.0; *w]).collect();
    for obs in probe {
        let hidden = mlp.hidden_activations(&obs.0);
        for (acc, layer) in sums.iter_mut().zip(hidden.iter()) {
            for (a, h) in acc.iter_mut().zip(layer) {
                *a += h.abs();
            }
        }
    }
    let n = probe.len().max(1) as f64;
    sums.into_iter().map(|layer| layer.into_iter().map(|s| s / n).collect()).collect()
}

/// Divides each unit's mean absolute activation by the layer mean. A silent
/// layer scores 0 everywhere.
pub fn normalized_scores(mean_abs: &[f64]) -> Vec<f64> {
    let layer_mean = mean_abs.iter().sum::<f64>() / mean_abs.len().max(1) as f64;
    if layer_mean > 0.0 {
        mean_abs.iter().map(|m| m / layer_mean).collect()
    } else {
        vec![0.0; mean_abs.len()]
    }
}

/// Normalized per-unit scores of the two hidden layers of `mlp`.
pub fn unit_scores(mlp: &Mlp, probe: &[Observation]) -> Vec<Vec<f64>> {
    mean_abs_activations(mlp, probe).iter().map(|l| normalized_scores(l)).collect()
}

fn report(mlp: &Mlp, probe: &[Observation], tau: f64, global_step: u64) -> Result<DormantReport> {
    if probe.is_empty() {
        return Err(Error::InvalidConfig("dormant-unit probe batch is empty".into()));
    }
    let scores = unit_scores(mlp, probe);
    let dormant_per_layer: Vec<usize> = scores.iter().map(|l| l.iter().filter(|s| **s <= tau).count()).collect();
    let total_units: usize = scores.iter().map(Vec::len).sum();
    let dormant: usize = dormant_per_layer.iter().sum();
    Ok(DormantReport {
        global_step,
        tau,
        dormant_per_layer,
        total_units,
        dormant_ratio: dormant as f64 / total_units as f64,
        probe_batch_size: probe.len(),
        scores,
    })
}

/// Dormant units of the policy trunk.
pub fn dormant_ratio(params: &NetworkParams, probe: &[Observation], tau: f64) -> Result<DormantReport> {
    report(&params.policy, probe, tau, 0)
}

/// Dormant units of the value trunk.
pub fn value_dormant_ratio(params: &NetworkParams, probe: &[Observation], tau: f64) -> Result<DormantReport> {
    report(&params.value, probe, tau, 0)
}

/// Evenly strided subset of at most `size` observations.
pub fn probe_subset(observations: &[Observation], size: usize) -> Vec<Observation> {
    if observations.len() <= size {
        return observations.to_vec();
    }
    let stride = observations.len() as f64 / size as f64;
    (0..size).map(|i| observations[(i as f64 * stride) as usize]).collect()
}

use serde::{Deserialize, Serialize};

use super::{NetworkParams, TensorKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: NetworkParams,
    pub second_moment: NetworkParams,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update. `l2_lambda * w` is added to the gradient of
/// every weight matrix before the moment update. On non-finite gradients
/// nothing is modified.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    adam: &mut AdamState,
    lr: f64,
    l2_lambda: f64,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::InvalidConfig(format!("learning rate {lr} must be non-negative")));
    }
    let AdamConfig { beta1, beta2, eps } = adam.config;
    adam.step += 1;
    let bias1 = 1.0 - beta1.powi(adam.step as i32);
    let bias2 = 1.0 - beta2.powi(adam.step as i32);

    let grads = grads.tensors();
    let moments = adam.first_moment.tensors_mut().into_iter().zip(adam.second_moment.tensors_mut());
    for (((kind, theta), g), ((_, m), (_, v))) in params.tensors_mut().into_iter().zip(grads).zip(moments) {
        let decay = if kind == TensorKind::Weight { l2_lambda } else { 0.0 };
        let g = g.1;
        for j in 0..theta.len() {
            let gj = g[j] + decay * theta[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            theta[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    params.clamp_log_std();
    Ok(())
}

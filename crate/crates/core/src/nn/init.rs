use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dense, Mlp, NetworkParams, HIDDEN};
use crate::env::{ACT_DIM, OBS_DIM};

/// Orthogonal-initialization gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub hidden_gain: f64,
    pub policy_head_gain: f64,
    pub value_head_gain: f64,
    pub log_std: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            hidden_gain: std::f64::consts::SQRT_2,
            policy_head_gain: 0.01,
            value_head_gain: 1.0,
            log_std: 0.0,
        }
    }
}

/// `rows x cols` matrix with orthonormal rows or columns (whichever is
/// shorter), scaled by `gain`, row-major.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Vec<f64> {
    let (tall, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let a = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    // sign fix makes the distribution uniform over orthogonal matrices
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let v = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
            out[i * cols + j] = gain * v;
        }
    }
    out
}

fn dense(n_in: usize, n_out: usize, gain: f64, rng: &mut impl Rng) -> Dense {
    Dense {
        n_in,
        n_out,
        weight: orthogonal(n_out, n_in, gain, rng),
        bias: vec![0.0; n_out],
    }
}

impl NetworkParams {
    pub fn init(config: &InitConfig, rng: &mut impl Rng) -> Self {
        let mlp = |out: usize, head_gain: f64, rng: &mut _| Mlp {
            layers: [
                dense(OBS_DIM, HIDDEN, config.hidden_gain, rng),
                dense(HIDDEN, HIDDEN, config.hidden_gain, rng),
                dense(HIDDEN, out, head_gain, rng),
            ],
        };
        let policy = mlp(ACT_DIM, config.policy_head_gain, rng);
        let value = mlp(1, config.value_head_gain, rng);
        let mut p = Self {
            policy,
            value,
            log_std: vec![config.log_std; ACT_DIM],
        };
        p.clamp_log_std();
        p
    }
}

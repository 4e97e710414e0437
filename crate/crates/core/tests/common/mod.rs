#![allow(dead_code)]

pub mod oracles;

use hoverlab::env::{Observation, ACT_DIM};
use hoverlab::nn::{gaussian, InitConfig, NetworkParams};
use hoverlab::ppo::{loss_gradient, ppo_loss, standardize, LossTerm, Minibatch, PpoConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_params(rng: &mut impl Rng) -> NetworkParams {
    let init = InitConfig {
        policy_head_gain: rng.random_range(0.1..1.5),
        value_head_gain: rng.random_range(0.5..2.0),
        log_std: rng.random_range(-1.0..0.5),
        ..InitConfig::default()
    };
    let mut p = NetworkParams::init(&init, rng);
    for s in &mut p.log_std {
        *s += rng.random_range(-0.3..0.3);
    }
    p
}

/// A batch whose probability ratios keep well clear of the clip kinks.
pub fn random_batch(params: &NetworkParams, rng: &mut impl Rng, n: usize, eps: f64) -> Minibatch {
    let mut mb = Minibatch::default();
    while mb.len() < n {
        let obs = Observation(std::array::from_fn(|_| rng.random_range(-2.0..2.0)));
        let (mean, log_std) = params.forward_policy(&obs);
        let action: [f64; ACT_DIM] = std::array::from_fn(|j| mean[j] + log_std[j].exp() * rng.random_range(-1.5..1.5));
        let lp = gaussian::log_prob(&mean, &log_std, &action);
        let ratio: f64 = rng.random_range(0.6..1.4);
        if ((ratio - (1.0 - eps)).abs() < 1e-2) || ((ratio - (1.0 + eps)).abs() < 1e-2) {
            continue;
        }
        mb.observations.push(obs);
        mb.actions.push(action);
        mb.old_log_probs.push(lp - ratio.ln());
        mb.advantages.push(rng.random_range(-2.0..2.0));
        mb.returns.push(rng.random_range(-3.0..3.0));
    }
    standardize(&mut mb.advantages);
    mb
}

pub struct FdResult {
    pub checked: usize,
    pub worst_rel: f64,
    pub worst_index: usize,
}

/// Central differences of the total PPO loss against the analytic gradient
/// for every parameter. Relative error uses `max(|a|, |n|, floor)`.
pub fn fd_check(seed: u64, batch: usize, h: f64, floor: f64) -> FdResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = random_params(&mut rng);
    let cfg = PpoConfig {
        entropy_coef: 0.01,
        ..PpoConfig::default()
    };
    let mb = random_batch(&params, &mut rng, batch, cfg.clip_epsilon);
    let (_, grad) = loss_gradient(&params, &mb, &cfg, LossTerm::Total).unwrap();
    let analytic = grad.to_flat();
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut worst_rel = 0.0;
    let mut worst_index = 0;
    for i in 0..base.len() {
        flat[i] = base[i] + h;
        probe.set_flat(&flat);
        let up = ppo_loss(&probe, &mb, &cfg).unwrap().total_loss;
        flat[i] = base[i] - h;
        probe.set_flat(&flat);
        let down = ppo_loss(&probe, &mb, &cfg).unwrap().total_loss;
        flat[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(floor);
        if rel > worst_rel {
            worst_rel = rel;
            worst_index = i;
        }
    }
    FdResult {
        checked: base.len(),
        worst_rel,
        worst_index,
    }
}

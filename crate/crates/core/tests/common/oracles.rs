//! Independent reference implementations used by several test targets.

use hoverlab::env::Observation;
use hoverlab::nn::{InitConfig, NetworkParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn direct_reward(p: [f64; 3], v: [f64; 3], a: [f64; 4]) -> f64 {
    let norm = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>().sqrt();
    -1.0 * norm(&p) - 0.5 * norm(&v) - 1e-5 * norm(&a)
}

/// Windowed costs written straight from the 1-based index ranges.
pub fn brute_cost(r: &[f64], l: &[f64], t_win: usize, lo: usize, hi: usize) -> f64 {
    let mut acc = 0.0;
    let mut t = lo;
    while t <= hi {
        acc += -r[t - 1] + l[t - 1];
        t += 1;
    }
    acc / t_win as f64
}

pub fn brute_update(r: &[f64], l: &[f64], t_win: usize, lr: f64, gain: f64, bounds: (f64, f64)) -> (f64, f64, f64) {
    let n = r.len();
    let c_ret = brute_cost(r, l, t_win, n - t_win + 1, n);
    let c_prev = brute_cost(r, l, t_win, n - t_win, n - 1);
    let g = c_ret - c_prev;
    let mut next = lr - gain * g;
    if next < bounds.0 {
        next = bounds.0;
    }
    if next > bounds.1 {
        next = bounds.1;
    }
    (c_ret, c_prev, next)
}

/// `A_t = sum_k (gamma lambda)^(k-t) delta_k`, cut at the first done, by direct
/// double loop.
pub fn brute_gae(r: &[f64], v: &[f64], d: &[bool], last: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = r.len();
    let next_v = |k: usize| if k + 1 < n { v[k + 1] } else { last };
    let delta: Vec<f64> = (0..n)
        .map(|k| r[k] + gamma * next_v(k) * if d[k] { 0.0 } else { 1.0 } - v[k])
        .collect();
    let mut adv = vec![0.0; n];
    for t in 0..n {
        let mut weight = 1.0;
        for k in t..n {
            adv[t] += weight * delta[k];
            if d[k] {
                break;
            }
            weight *= gamma * lambda;
        }
    }
    let ret = adv.iter().zip(v).map(|(a, b)| a + b).collect();
    (adv, ret)
}

pub fn random_net(seed: u64) -> (NetworkParams, Vec<Observation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = InitConfig {
        hidden_gain: rng.random_range(0.5..4.0),
        ..InitConfig::default()
    };
    let mut p = NetworkParams::init(&init, &mut rng);
    // knock out a random handful of units so the threshold matters
    for layer in 0..2 {
        let n_in = p.policy.layers[layer].n_in;
        for _ in 0..rng.random_range(0..8) {
            let unit = rng.random_range(0..p.policy.layers[layer].n_out);
            let scale = rng.random_range(0.0..0.05);
            for w in &mut p.policy.layers[layer].weight[unit * n_in..(unit + 1) * n_in] {
                *w *= scale;
            }
            p.policy.layers[layer].bias[unit] *= scale;
        }
    }
    let probe = (0..64)
        .map(|_| Observation(std::array::from_fn(|_| rng.random_range(-3.0..3.0))))
        .collect();
    (p, probe)
}

/// Two-pass loop: first the per-unit mean |h|, then the layer normalizer.
pub fn loop_ratio(p: &NetworkParams, probe: &[Observation], tau: f64) -> f64 {
    let mut dormant = 0;
    let mut total = 0;
    for layer in 0..2 {
        let width = p.policy.layers[layer].n_out;
        let mut mean_abs = vec![0.0; width];
        for obs in probe {
            let mut x: Vec<f64> = obs.0.to_vec();
            for l in 0..=layer {
                let d = &p.policy.layers[l];
                let mut y = vec![0.0; d.n_out];
                for i in 0..d.n_out {
                    let mut s = d.bias[i];
                    for j in 0..d.n_in {
                        s += d.weight[i * d.n_in + j] * x[j];
                    }
                    y[i] = s.tanh();
                }
                x = y;
            }
            for i in 0..width {
                mean_abs[i] += x[i].abs() / probe.len() as f64;
            }
        }
        let layer_mean: f64 = mean_abs.iter().sum::<f64>() / width as f64;
        for m in &mean_abs {
            let score = if layer_mean > 0.0 { m / layer_mean } else { 0.0 };
            if score <= tau {
                dormant += 1;
            }
            total += 1;
        }
    }
    dormant as f64 / total as f64
}

pub fn classify(scores: &[f64], tau: f64) -> Vec<bool> {
    scores.iter().map(|s| *s <= tau).collect()
}


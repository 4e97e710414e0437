use super::{Minibatch, PpoConfig};
use crate::error::{Error, Result};
use crate::nn::{gaussian, HeadGrad, HeadOutput, NetworkParams};

/// Subtracts the mean and divides by the population standard deviation (+1e-8).
pub fn standardize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v = (*v - mean) / (std + 1e-8);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    /// `-E[min(rho A, clip(rho) A)]`
    pub policy_loss: f64,
    /// `E[(V - return)^2]`, before `value_coef`.
    pub value_loss: f64,
    /// Mean policy entropy.
    pub entropy: f64,
    /// `policy_loss + value_coef * value_loss - entropy_coef * entropy`
    pub total_loss: f64,
    /// Fraction of samples whose ratio left `[1 - eps, 1 + eps]`.
    pub clip_fraction: f64,
    pub max_ratio_deviation: f64,
}

/// Which part of the objective to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Policy,
    Value,
    Entropy,
    Total,
}

struct SampleTerms {
    policy: f64,
    value: f64,
    entropy: f64,
    clipped: bool,
    ratio: f64,
    grad_policy: HeadGrad,
    grad_value: HeadGrad,
    grad_entropy: HeadGrad,
}

fn sample_terms(out: &HeadOutput, mb: &Minibatch, i: usize, eps: f64) -> Result<SampleTerms> {
    let action = &mb.actions[i];
    let adv = mb.advantages[i];
    let log_prob = gaussian::log_prob(&out.mean, &out.log_std, action);
    let ratio = (log_prob - mb.old_log_probs[i]).exp();
    if !ratio.is_finite() {
        return Err(Error::NonFiniteRatio { index: i });
    }
    let unclipped = ratio * adv;
    let clipped_ratio = ratio.clamp(1.0 - eps, 1.0 + eps);
    let clipped = clipped_ratio * adv;
    let (policy, d_log_prob) = if unclipped <= clipped {
        (-unclipped, -adv * ratio)
    } else {
        // the clipped branch is flat in the parameters
        (-clipped, 0.0)
    };
    let (dm, ds) = gaussian::log_prob_grad(&out.mean, &out.log_std, action);
    let grad_policy = HeadGrad {
        mean: dm.map(|x| x * d_log_prob),
        log_std: ds.map(|x| x * d_log_prob),
        value: 0.0,
    };
    let err = out.value - mb.returns[i];
    let grad_value = HeadGrad {
        value: 2.0 * err,
        ..HeadGrad::default()
    };
    let grad_entropy = HeadGrad {
        log_std: [1.0; crate::env::ACT_DIM],
        ..HeadGrad::default()
    };
    Ok(SampleTerms {
        policy,
        value: err * err,
        entropy: gaussian::entropy(&out.log_std),
        clipped: (ratio - 1.0).abs() > eps,
        ratio,
        grad_policy,
        grad_value,
        grad_entropy,
    })
}

fn combine(term: LossTerm, s: &SampleTerms, cfg: &PpoConfig) -> (f64, HeadGrad) {
    let scaled = |g: &HeadGrad, k: f64| HeadGrad {
        mean: g.mean.map(|x| x * k),
        log_std: g.log_std.map(|x| x * k),
        value: g.value * k,
    };
    match term {
        LossTerm::Policy => (s.policy, s.grad_policy),
        LossTerm::Value => (s.value, s.grad_value),
        LossTerm::Entropy => (s.entropy, s.grad_entropy),
        LossTerm::Total => {
            let v = scaled(&s.grad_value, cfg.value_coef);
            let e = scaled(&s.grad_entropy, -cfg.entropy_coef);
            let p = &s.grad_policy;
            let grad = HeadGrad {
                mean: std::array::from_fn(|j| p.mean[j] + v.mean[j] + e.mean[j]),
                log_std: std::array::from_fn(|j| p.log_std[j] + v.log_std[j] + e.log_std[j]),
                value: p.value + v.value + e.value,
            };
            (s.policy + cfg.value_coef * s.value - cfg.entropy_coef * s.entropy, grad)
        }
    }
}

#[derive(Default)]
struct Accum {
    policy: f64,
    value: f64,
    entropy: f64,
    clipped: usize,
    max_dev: f64,
}

impl Accum {
    fn add(&mut self, s: &SampleTerms) {
        self.policy += s.policy;
        self.value += s.value;
        self.entropy += s.entropy;
        self.clipped += s.clipped as usize;
        self.max_dev = self.max_dev.max((s.ratio - 1.0).abs());
    }

    fn finish(self, n: usize, cfg: &PpoConfig) -> LossComponents {
        let n = n.max(1) as f64;
        let policy_loss = self.policy / n;
        let value_loss = self.value / n;
        let entropy = self.entropy / n;
        LossComponents {
            policy_loss,
            value_loss,
            entropy,
            total_loss: policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy,
            clip_fraction: self.clipped as f64 / n,
            max_ratio_deviation: self.max_dev,
        }
    }
}

/// Forward-only evaluation of the clipped PPO objective on a minibatch whose
/// advantages are already standardized.
pub fn ppo_loss(params: &NetworkParams, mb: &Minibatch, cfg: &PpoConfig) -> Result<LossComponents> {
    let mut acc = Accum::default();
    for (i, obs) in mb.observations.iter().enumerate() {
        let out = params.forward(obs);
        acc.add(&sample_terms(&out, mb, i, cfg.clip_epsilon)?);
    }
    let c = acc.finish(mb.len(), cfg);
    if !c.total_loss.is_finite() {
        return Err(Error::NonFiniteLoss(c.total_loss));
    }
    Ok(c)
}

/// Loss components and the gradient of `term` with respect to all parameters.
pub fn loss_gradient(
    params: &NetworkParams,
    mb: &Minibatch,
    cfg: &PpoConfig,
    term: LossTerm,
) -> Result<(LossComponents, NetworkParams)> {
    let mut acc = Accum::default();
    let mut failure = None;
    let (_, grad) = params.backward(&mb.observations, |i, out| {
        match sample_terms(out, mb, i, cfg.clip_epsilon) {
            Ok(s) => {
                acc.add(&s);
                combine(term, &s, cfg)
            }
            Err(e) => {
                failure.get_or_insert(e);
                (0.0, HeadGrad::default())
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let c = acc.finish(mb.len(), cfg);
    if !c.total_loss.is_finite() {
        return Err(Error::NonFiniteLoss(c.total_loss));
    }
    Ok((c, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Observation, ACT_DIM, OBS_DIM};
    use crate::nn::InitConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch(params: &NetworkParams, rng: &mut impl Rng, n: usize, ratio_noise: f64) -> Minibatch {
        let mut mb = Minibatch::default();
        for _ in 0..n {
            let obs = Observation(std::array::from_fn(|_| rng.random_range(-2.0..2.0)));
            let (mean, log_std) = params.forward_policy(&obs);
            let action: [f64; ACT_DIM] = std::array::from_fn(|j| mean[j] + rng.random_range(-1.0..1.0));
            let lp = gaussian::log_prob(&mean, &log_std, &action);
            mb.observations.push(obs);
            mb.actions.push(action);
            mb.old_log_probs.push(lp + rng.random_range(-ratio_noise..=ratio_noise));
            mb.advantages.push(rng.random_range(-1.0..1.0));
            mb.returns.push(rng.random_range(-5.0..5.0));
        }
        standardize(&mut mb.advantages);
        mb
    }

    #[test]
    fn standardize_moments() {
        let mut v = vec![3.0, -1.0, 4.0, 1.5, 9.0, 2.0];
        standardize(&mut v);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn on_policy_ratio_is_one_and_policy_term_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = NetworkParams::init(&InitConfig::default(), &mut rng);
        let cfg = PpoConfig {
            entropy_coef: 0.01,
            ..PpoConfig::default()
        };
        let mb = batch(&params, &mut rng, 64, 0.0);
        let c = ppo_loss(&params, &mb, &cfg).unwrap();
        assert!(c.max_ratio_deviation < 1e-9);
        assert_eq!(c.clip_fraction, 0.0);
        assert!(c.policy_loss.abs() < 1e-9);
        let rest = cfg.value_coef * c.value_loss - cfg.entropy_coef * c.entropy;
        assert!((c.total_loss - rest).abs() < 1e-9);
    }

    #[test]
    fn clipped_plateau_has_zero_policy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = NetworkParams::init(&InitConfig::default(), &mut rng);
        let cfg = PpoConfig::default();
        let mut mb = batch(&params, &mut rng, 1, 0.0);
        mb.advantages = vec![1.0];
        // rho = 1 + 2 eps
        mb.old_log_probs[0] -= (1.0 + 2.0 * cfg.clip_epsilon).ln();
        let (c, g) = loss_gradient(&params, &mb, &cfg, LossTerm::Policy).unwrap();
        assert_eq!(c.clip_fraction, 1.0);
        assert!((c.policy_loss + (1.0 + cfg.clip_epsilon)).abs() < 1e-12);
        assert_eq!(g.l2_norm(), 0.0);
    }

    #[test]
    fn matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = NetworkParams::init(
            &InitConfig {
                policy_head_gain: 1.0,
                log_std: -0.5,
                ..InitConfig::default()
            },
            &mut rng,
        );
        let cfg = PpoConfig {
            entropy_coef: 0.02,
            ..PpoConfig::default()
        };
        let mb = batch(&params, &mut rng, 16, 0.5);
        let c = ppo_loss(&params, &mb, &cfg).unwrap();

        let mut policy = 0.0;
        let mut value = 0.0;
        let mut entropy = 0.0;
        for i in 0..mb.len() {
            let (mean, log_std) = params.forward_policy(&mb.observations[i]);
            let mut lp = 0.0;
            let mut h = 0.0;
            for j in 0..ACT_DIM {
                let std = log_std[j].exp();
                let z = (mb.actions[i][j] - mean[j]) / std;
                lp += -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                h += 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * std * std).ln();
            }
            let rho = (lp - mb.old_log_probs[i]).exp();
            let a = mb.advantages[i];
            let clipped = if rho < 0.8 {
                0.8
            } else if rho > 1.2 {
                1.2
            } else {
                rho
            };
            policy -= f64::min(rho * a, clipped * a);
            let v = params.forward_value(&mb.observations[i]);
            value += (v - mb.returns[i]).powi(2);
            entropy += h;
        }
        let n = mb.len() as f64;
        assert!((c.policy_loss - policy / n).abs() < 1e-12);
        assert!((c.value_loss - value / n).abs() < 1e-12);
        assert!((c.entropy - entropy / n).abs() < 1e-12);
        let total = policy / n + 0.5 * value / n - 0.02 * entropy / n;
        assert!((c.total_loss - total).abs() < 1e-12);
    }

    #[test]
    fn non_finite_ratio_reports_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = NetworkParams::init(&InitConfig::default(), &mut rng);
        let mut mb = batch(&params, &mut rng, 4, 0.0);
        mb.old_log_probs[2] = -1e6;
        let err = ppo_loss(&params, &mb, &PpoConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteRatio { index: 2 }));
        let err = loss_gradient(&params, &mb, &PpoConfig::default(), LossTerm::Total).unwrap_err();
        assert!(matches!(err, Error::NonFiniteRatio { index: 2 }));
    }

    #[test]
    fn observation_dim_is_twelve() {
        assert_eq!(OBS_DIM, 12);
    }
}

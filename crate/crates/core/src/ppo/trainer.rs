use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{loss_gradient, standardize, LossComponents, LossTerm, PpoConfig, RolloutBuffer};
use crate::env::{Action, EnvSpec, HoverEnv, Observation, ACT_DIM};
use crate::error::{Error, Result};
use crate::nn::{adam_step, gaussian, AdamState, InitConfig, NetworkParams};
use crate::plasticity::{dormant_ratio, probe_subset, DormantConfig, DormantReport};
use crate::recom::{RecomConfig, RecomState, UpdateOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub ppo: PpoConfig,
    pub init: InitConfig,
    /// Coupled weight decay applied to weight matrices.
    pub l2_lambda: f64,
    /// `None` keeps the learning rate fixed at `ppo.learning_rate`.
    pub recom: Option<RecomConfig>,
    pub dormant: DormantConfig,
    pub seed: u64,
    /// Collect rollouts sequentially on the calling thread.
    pub deterministic: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            ppo: PpoConfig::default(),
            init: InitConfig::default(),
            l2_lambda: 0.0,
            recom: None,
            dormant: DormantConfig::default(),
            seed: 0,
            deterministic: true,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        self.dormant.validate()?;
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!("l2_lambda must be non-negative, got {}", self.l2_lambda)));
        }
        if let Some(r) = &self.recom {
            r.validate()?;
        }
        Ok(())
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub global_step: u64,
    /// Mean return of episodes completed during the iteration; empty when none did.
    pub mean_episode_reward: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_loss: f64,
    pub learning_rate: f64,
    pub clip_fraction: f64,
    pub dormant_ratio: f64,
    pub wind_speed: f64,
}

impl Metrics {
    pub const FIELDS: [&'static str; 10] = [
        "global_step",
        "mean_episode_reward",
        "policy_loss",
        "value_loss",
        "entropy",
        "total_loss",
        "learning_rate",
        "clip_fraction",
        "dormant_ratio",
        "wind_speed",
    ];
}

#[derive(Debug, Clone)]
pub struct IterationReport {
    pub metrics: Metrics,
    pub recom: Option<UpdateOutcome>,
    pub episode_returns: Vec<f64>,
    pub crashes: usize,
    pub dormant: DormantReport,
    /// `max |rho - 1|` on the first minibatch of the first epoch.
    pub first_ratio_deviation: f64,
    pub buffer: RolloutBuffer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnvSlot {
    env: HoverEnv,
    obs: Observation,
    episode_return: f64,
    rng: ChaCha8Rng,
}

#[derive(Debug, Default)]
struct Segment {
    observations: Vec<Observation>,
    actions: Vec<[f64; ACT_DIM]>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    last_value: f64,
    returns: Vec<f64>,
    crashes: usize,
}

impl EnvSlot {
    /// `horizon` steps of the stochastic policy. Episodes that end are reset
    /// with the wind for `step_of(t)`.
    fn collect(
        &mut self,
        params: &NetworkParams,
        horizon: usize,
        gamma: f64,
        reward_scale: f64,
        step_of: impl Fn(usize) -> u64,
    ) -> Segment {
        let mut seg = Segment::default();
        for t in 0..horizon {
            let out = params.forward(&self.obs);
            let noise: [f64; ACT_DIM] = std::array::from_fn(|_| self.rng.sample(StandardNormal));
            let raw = gaussian::sample(&out.mean, &out.log_std, &noise);
            let log_prob = gaussian::log_prob(&out.mean, &out.log_std, &raw);
            let tr = self.env.step(&Action(raw));
            let mut reward = tr.reward * reward_scale;
            self.episode_return += tr.reward;
            if tr.info.truncated {
                // time limit, not a failure: bootstrap from the final state
                reward += gamma * params.forward_value(&tr.observation);
            }
            seg.observations.push(self.obs);
            seg.actions.push(raw);
            seg.log_probs.push(log_prob);
            seg.rewards.push(reward);
            seg.values.push(out.value);
            seg.dones.push(tr.done);
            if tr.done {
                seg.returns.push(self.episode_return);
                seg.crashes += tr.info.crashed as usize;
                self.episode_return = 0.0;
                self.obs = self.env.reset(step_of(t + 1));
            } else {
                self.obs = tr.observation;
            }
        }
        seg.last_value = params.forward_value(&self.obs);
        seg
    }
}

/// PPO learner with its environments, optimizer and optional scheduler.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trainer {
    pub config: TrainerConfig,
    pub env_spec: EnvSpec,
    pub params: NetworkParams,
    pub adam: AdamState,
    pub recom: Option<RecomState>,
    pub global_step: u64,
    pub iteration: u64,
    envs: Vec<EnvSlot>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainerConfig, env_spec: EnvSpec) -> Result<Self> {
        config.validate()?;
        env_spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = NetworkParams::init(&config.init, &mut rng);
        let adam = AdamState::new(&params, config.ppo.adam.clone());
        let recom = match &config.recom {
            Some(r) => Some(RecomState::new(r.clone(), config.ppo.learning_rate)?),
            None => None,
        };
        let mut envs = Vec::with_capacity(config.ppo.n_envs);
        for _ in 0..config.ppo.n_envs {
            let mut env = HoverEnv::new(env_spec.clone(), rng.random())?;
            let obs = env.reset(0);
            envs.push(EnvSlot {
                env,
                obs,
                episode_return: 0.0,
                rng: ChaCha8Rng::seed_from_u64(rng.random()),
            });
        }
        Ok(Self {
            config,
            env_spec,
            params,
            adam,
            recom,
            global_step: 0,
            iteration: 0,
            envs,
            rng,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        match &self.recom {
            Some(r) => r.learning_rate(),
            None => self.config.ppo.learning_rate,
        }
    }

    /// Steps one rollout plus its update adds to `global_step`.
    pub fn steps_per_iteration(&self) -> u64 {
        self.config.ppo.batch_size() as u64
    }

    pub fn collect_rollout(&mut self) -> (RolloutBuffer, Vec<f64>, usize) {
        let cfg = &self.config.ppo;
        let (horizon, n_envs, gamma, scale) = (cfg.horizon, cfg.n_envs, cfg.gamma, cfg.reward_scale);
        let base = self.global_step;
        let params = &self.params;
        let segments: Vec<Segment> = if self.config.deterministic || n_envs == 1 {
            self.envs
                .iter_mut()
                .enumerate()
                .map(|(e, slot)| slot.collect(params, horizon, gamma, scale, |t| base + (t * n_envs + e) as u64))
                .collect()
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = self
                    .envs
                    .iter_mut()
                    .enumerate()
                    .map(|(e, slot)| {
                        s.spawn(move || slot.collect(params, horizon, gamma, scale, |t| base + (t * n_envs + e) as u64))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
            })
        };

        let mut buf = RolloutBuffer {
            horizon,
            n_envs,
            ..RolloutBuffer::default()
        };
        for t in 0..horizon {
            for seg in &segments {
                buf.observations.push(seg.observations[t]);
                buf.actions.push(seg.actions[t]);
                buf.log_probs.push(seg.log_probs[t]);
                buf.rewards.push(seg.rewards[t]);
                buf.values.push(seg.values[t]);
                buf.dones.push(seg.dones[t]);
            }
        }
        buf.last_values = segments.iter().map(|s| s.last_value).collect();
        let crashes = segments.iter().map(|s| s.crashes).sum();
        let returns = segments.into_iter().flat_map(|s| s.returns).collect();
        (buf, returns, crashes)
    }

    /// One collect-and-update cycle.
    pub fn train_iteration(&mut self) -> Result<IterationReport> {
        let wind_speed = self.env_spec.wind.speed_at(self.global_step);
        let (mut buf, episode_returns, crashes) = self.collect_rollout();
        self.global_step += self.steps_per_iteration();
        self.iteration += 1;

        let outcome = self.recom.as_mut().map(|r| r.update_lr(self.global_step));
        let lr = self.learning_rate();

        let cfg = self.config.ppo.clone();
        buf.compute_advantages(cfg.gamma, cfg.gae_lambda);
        let mut sums = LossComponents::default();
        let mut n_updates = 0usize;
        let mut first_ratio_deviation = f64::NAN;
        for _ in 0..cfg.epochs {
            for mut mb in buf.shuffled_minibatches(cfg.minibatch_size, &mut self.rng) {
                standardize(&mut mb.advantages);
                let (c, mut grad) = loss_gradient(&self.params, &mb, &cfg, LossTerm::Total)?;
                if n_updates == 0 {
                    first_ratio_deviation = c.max_ratio_deviation;
                }
                let norm = grad.l2_norm();
                if cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm {
                    grad.scale(cfg.max_grad_norm / norm);
                }
                adam_step(&mut self.params, &grad, &mut self.adam, lr, self.config.l2_lambda)?;
                sums.policy_loss += c.policy_loss;
                sums.value_loss += c.value_loss;
                sums.entropy += c.entropy;
                sums.total_loss += c.total_loss;
                sums.clip_fraction += c.clip_fraction;
                n_updates += 1;
            }
        }
        let k = n_updates.max(1) as f64;
        let mean_total_loss = sums.total_loss / k;

        if let Some(r) = self.recom.as_mut() {
            for &ret in &episode_returns {
                r.record(ret, mean_total_loss)?;
            }
        }

        let probe = probe_subset(&buf.observations, self.config.dormant.probe_size);
        let mut dormant = dormant_ratio(&self.params, &probe, self.config.dormant.tau)?;
        dormant.global_step = self.global_step;

        let mean_episode_reward = if episode_returns.is_empty() {
            None
        } else {
            Some(episode_returns.iter().sum::<f64>() / episode_returns.len() as f64)
        };
        let metrics = Metrics {
            global_step: self.global_step,
            mean_episode_reward,
            policy_loss: sums.policy_loss / k,
            value_loss: sums.value_loss / k,
            entropy: sums.entropy / k,
            total_loss: mean_total_loss,
            learning_rate: lr,
            clip_fraction: sums.clip_fraction / k,
            dormant_ratio: dormant.dormant_ratio,
            wind_speed,
        };
        Ok(IterationReport {
            metrics,
            recom: outcome,
            episode_returns,
            crashes,
            dormant,
            first_ratio_deviation,
            buffer: buf,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::RobotParams;
    use crate::env::{EpisodeConfig, RewardWeights, WindSchedule};

    fn spec() -> EnvSpec {
        EnvSpec {
            robot: RobotParams::default(),
            reward: RewardWeights::default(),
            wind: WindSchedule::still_air(),
            episode: EpisodeConfig {
                max_steps: 50,
                ..EpisodeConfig::default()
            },
        }
    }

    fn small(seed: u64) -> TrainerConfig {
        TrainerConfig {
            ppo: PpoConfig {
                horizon: 128,
                n_envs: 2,
                epochs: 2,
                minibatch_size: 64,
                ..PpoConfig::default()
            },
            seed,
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let mut cfg = small(1);
        cfg.ppo.learning_rate = 0.0;
        let mut t = Trainer::new(cfg, spec()).unwrap();
        let before = t.params.clone();
        let r = t.train_iteration().unwrap();
        assert_eq!(t.params, before);
        assert_eq!(r.metrics.learning_rate, 0.0);
        assert_eq!(r.metrics.global_step, 256);
        assert!(r.metrics.total_loss.is_finite());
    }

    #[test]
    fn first_minibatch_is_on_policy() {
        let mut t = Trainer::new(small(2), spec()).unwrap();
        let r = t.train_iteration().unwrap();
        assert!(r.first_ratio_deviation < 1e-9);
    }

    #[test]
    fn horizon_one_holds_one_transition_per_env() {
        let mut cfg = small(3);
        cfg.ppo.horizon = 1;
        cfg.ppo.n_envs = 3;
        cfg.ppo.minibatch_size = 3;
        let mut t = Trainer::new(cfg, spec()).unwrap();
        let (buf, _, _) = t.collect_rollout();
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.last_values.len(), 3);
    }

    #[test]
    fn threaded_collection_matches_sequential() {
        let mut a = small(4);
        a.deterministic = true;
        let mut b = a.clone();
        b.deterministic = false;
        let mut ta = Trainer::new(a, spec()).unwrap();
        let mut tb = Trainer::new(b, spec()).unwrap();
        let ra = ta.train_iteration().unwrap();
        let rb = tb.train_iteration().unwrap();
        assert_eq!(ra.metrics, rb.metrics);
        assert_eq!(ta.params, tb.params);
    }

    #[test]
    fn episodes_complete_and_are_recorded() {
        let mut cfg = small(5);
        cfg.recom = Some(RecomConfig {
            update_period: 256,
            ..RecomConfig::default()
        });
        let mut t = Trainer::new(cfg, spec()).unwrap();
        let r = t.train_iteration().unwrap();
        assert!(r.episode_returns.len() >= 4);
        assert_eq!(t.recom.as_ref().unwrap().len(), r.episode_returns.len());
        assert!(r.metrics.mean_episode_reward.unwrap() < 0.0);
    }
}

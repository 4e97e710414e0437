use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::EvalConfig;
use super::train::{Checkpoint, CHECKPOINT_DIR, EVAL_FILE};
use crate::dynamics::{allocate, Mat3, RobotParams, Vec3, WrenchCommand};
use crate::env::{Action, EnvSpec, HoverEnv, Observation, WindSchedule};
use crate::error::{Error, Result};
use crate::nn::NetworkParams;

/// Anything that can fly the evaluation episodes.
pub trait Controller {
    fn act(&mut self, obs: &Observation, env: &HoverEnv) -> Action;

    /// Called before every episode.
    fn reset(&mut self) {}
}

/// The learned policy's mean action.
pub struct PolicyController<'a> {
    pub params: &'a NetworkParams,
}

impl Controller for PolicyController<'_> {
    fn act(&mut self, obs: &Observation, _env: &HoverEnv) -> Action {
        Action(self.params.forward_policy(obs).0)
    }
}

/// Scripted geometric position controller with full state and wind knowledge.
#[derive(Debug, Clone)]
pub struct HoverOracle {
    pub kp: f64,
    pub kd: f64,
    pub max_accel: f64,
    pub k_att: Vec3,
    pub k_rate: Vec3,
}

impl HoverOracle {
    pub fn new(params: &RobotParams) -> Self {
        let j = Vec3::from(params.inertia);
        let (w_att, zeta) = (12.0, 0.9);
        Self {
            kp: 4.0,
            kd: 3.6,
            max_accel: 5.0,
            k_att: j * w_att * w_att,
            k_rate: j * 2.0 * zeta * w_att,
        }
    }

    pub fn wrench(&self, env: &HoverEnv) -> WrenchCommand {
        let p = env.spec().robot.clone();
        let s = env.state();
        let target = Vec3::from(env.spec().episode.target);
        let mut accel = -self.kp * (s.position - target) - self.kd * s.velocity;
        let n = accel.norm();
        if n > self.max_accel {
            accel *= self.max_accel / n;
        }
        let drag = p.drag_coefficient * (env.wind_velocity() - s.velocity);
        let force = p.mass * (accel + Vec3::new(0.0, 0.0, p.gravity)) - drag;
        let b3 = force.normalize();
        let b2 = b3.cross(&Vec3::x()).normalize();
        let b1 = b2.cross(&b3);
        let r_d = Mat3::from_columns(&[b1, b2, b3]);
        let r = &s.rotation;
        let e = 0.5 * (r_d.transpose() * r - r.transpose() * r_d);
        let e_r = Vec3::new(e[(2, 1)], e[(0, 2)], e[(1, 0)]);
        let w = &s.angular_velocity;
        let j = Vec3::from(p.inertia);
        let torque = -self.k_att.component_mul(&e_r) - self.k_rate.component_mul(w) + w.cross(&j.component_mul(w));
        WrenchCommand::new(force.dot(&r.column(2).into_owned()), torque)
    }
}

impl Controller for HoverOracle {
    fn act(&mut self, _obs: &Observation, env: &HoverEnv) -> Action {
        let robot = &env.spec().robot;
        let cmd = self.wrench(env).saturate(robot);
        Action::from_motor_thrusts(&allocate(&cmd, robot), robot)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub initial_position: [f64; 3],
    pub final_position: [f64; 3],
    pub steps: usize,
    pub terminated: bool,
    pub success: bool,
    /// Per-axis mean squared position error over the scoring window (m^2).
    pub mse: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_episodes: usize,
    /// Percent.
    pub success_rate: f64,
    pub mse_x: f64,
    pub mse_y: f64,
    pub mse_z: f64,
    pub success_radius: f64,
    pub window_seconds: f64,
    pub whole_trajectory: bool,
    pub wind_speed: f64,
    pub final_positions: Vec<[f64; 3]>,
    pub episodes: Vec<EpisodeResult>,
}

/// The environment used for evaluation: constant wind, configured init cube.
pub fn eval_spec(base: &EnvSpec, cfg: &EvalConfig) -> EnvSpec {
    let mut spec = base.clone();
    spec.wind = WindSchedule {
        direction: base.wind.direction,
        random_direction: base.wind.random_direction,
        ..WindSchedule::constant(cfg.wind_speed)
    };
    spec.episode.init_position_range = cfg.init_range;
    spec
}

/// Runs `cfg.episodes` episodes of `controller` and scores them.
pub fn evaluate(controller: &mut dyn Controller, base: &EnvSpec, cfg: &EvalConfig) -> Result<EvalSummary> {
    cfg.validate()?;
    let spec = eval_spec(base, cfg);
    let target = Vec3::from(spec.episode.target);
    let window = spec.episode.steps_in(cfg.window_seconds).max(1);
    let mut env = HoverEnv::new(spec, cfg.seed)?;
    let mut episodes = Vec::with_capacity(cfg.episodes);
    for _ in 0..cfg.episodes {
        controller.reset();
        let mut obs = env.reset(0);
        let initial = env.state().position;
        let mut errors: Vec<Vec3> = Vec::new();
        let terminated = loop {
            let action = controller.act(&obs, &env);
            let tr = env.step(&action);
            errors.push(env.state().position - target);
            obs = tr.observation;
            if tr.done {
                break tr.info.terminated;
            }
        };
        let tail = &errors[errors.len().saturating_sub(window)..];
        let scored = if cfg.whole_trajectory { &errors[..] } else { tail };
        let mse = std::array::from_fn(|k| scored.iter().map(|e| e[k] * e[k]).sum::<f64>() / scored.len() as f64);
        let success = !terminated && tail.iter().all(|e| e.norm() <= cfg.success_radius);
        let last = errors.last().copied().unwrap_or_default() + target;
        episodes.push(EpisodeResult {
            initial_position: initial.into(),
            final_position: last.into(),
            steps: errors.len(),
            terminated,
            success,
            mse,
        });
    }
    let n = episodes.len() as f64;
    let mean_axis = |k: usize| episodes.iter().map(|e| e.mse[k]).sum::<f64>() / n;
    Ok(EvalSummary {
        n_episodes: episodes.len(),
        success_rate: 100.0 * episodes.iter().filter(|e| e.success).count() as f64 / n,
        mse_x: mean_axis(0),
        mse_y: mean_axis(1),
        mse_z: mean_axis(2),
        success_radius: cfg.success_radius,
        window_seconds: cfg.window_seconds,
        whole_trajectory: cfg.whole_trajectory,
        wind_speed: cfg.wind_speed,
        final_positions: episodes.iter().map(|e| e.final_position).collect(),
        episodes,
    })
}

/// Command-line overrides of the stored evaluation settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalOverrides {
    pub episodes: Option<usize>,
    pub wind_speed: Option<f64>,
    pub init_range: Option<f64>,
}

/// Directory `eval.json` goes to: the run directory when the checkpoint sits
/// in its `checkpoints/` folder, otherwise next to the checkpoint.
pub fn eval_output_path(checkpoint: &Path) -> PathBuf {
    let parent = checkpoint.parent().unwrap_or(Path::new("."));
    let dir = if parent.file_name().is_some_and(|n| n == CHECKPOINT_DIR) {
        parent.parent().unwrap_or(parent)
    } else {
        parent
    };
    dir.join(EVAL_FILE)
}

/// Evaluates the mean policy stored in `checkpoint` and writes `eval.json`.
pub fn run_evaluation(checkpoint: &Path, overrides: &EvalOverrides) -> Result<(EvalSummary, PathBuf)> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = ck.config.evaluation.clone();
    if let Some(n) = overrides.episodes {
        cfg.episodes = n;
    }
    if let Some(w) = overrides.wind_speed {
        cfg.wind_speed = w;
    }
    if let Some(r) = overrides.init_range {
        cfg.init_range = r;
    }
    let params = &ck.trainer.params;
    let mut policy = PolicyController { params };
    let summary = evaluate(&mut policy, &ck.config.env_spec(), &cfg)?;
    let out = eval_output_path(checkpoint);
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(&out, text).map_err(|e| Error::io(&out, e))?;
    Ok((summary, out))
}

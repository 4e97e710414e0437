//! Hover task MDP on top of [`crate::dynamics`].
//!
//! Observations are `[x, y, z, vx, vy, vz, roll, pitch, yaw, wx, wy, wz]` in
//! physical units with ZYX Euler angles and body rates. Actions are four
//! normalized motor commands in `[-1, 1]`, mapped affinely onto
//! `[0, max_thrust / 4]`.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, Mat3, MotorState, RobotParams, RobotState, Vec3, NUM_MOTORS};
use crate::error::{Error, Result};

pub const OBS_DIM: usize = 12;
pub const ACT_DIM: usize = NUM_MOTORS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn from_state(state: &RobotState) -> Self {
        let e = euler_zyx(&state.rotation);
        let p = &state.position;
        let v = &state.velocity;
        let w = &state.angular_velocity;
        Self([p.x, p.y, p.z, v.x, v.y, v.z, e[0], e[1], e[2], w.x, w.y, w.z])
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn velocity(&self) -> Vec3 {
        Vec3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn euler(&self) -> [f64; 3] {
        [self.0[6], self.0[7], self.0[8]]
    }

    pub fn body_rates(&self) -> Vec3 {
        Vec3::new(self.0[9], self.0[10], self.0[11])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

// Fixed per-block scales for the optional observation normalization.
const OBS_SCALE: [f64; OBS_DIM] = [
    5.0,
    5.0,
    5.0,
    5.0,
    5.0,
    5.0,
    std::f64::consts::PI,
    std::f64::consts::FRAC_PI_2,
    std::f64::consts::PI,
    10.0,
    10.0,
    10.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action(pub [f64; ACT_DIM]);

impl Action {
    pub fn clipped(&self) -> Self {
        Self(self.0.map(|a| if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) }))
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Per-motor thrust commands (N) for a clipped action.
    pub fn motor_thrusts(&self, params: &RobotParams) -> [f64; NUM_MOTORS] {
        let f_max = params.max_motor_thrust();
        self.clipped().0.map(|a| 0.5 * (a + 1.0) * f_max)
    }

    /// The action that commands exactly the hover thrust on every motor.
    pub fn hover(params: &RobotParams) -> Self {
        Self::from_motor_thrusts(&[params.hover_thrust() / NUM_MOTORS as f64; NUM_MOTORS], params)
    }

    pub fn from_motor_thrusts(thrusts: &[f64; NUM_MOTORS], params: &RobotParams) -> Self {
        let f_max = params.max_motor_thrust();
        Self(thrusts.map(|f| 2.0 * f / f_max - 1.0))
    }
}

/// ZYX (yaw-pitch-roll) angles `[roll, pitch, yaw]` of a body-to-world rotation.
pub fn euler_zyx(r: &Mat3) -> [f64; 3] {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = wrap_angle(r[(2, 1)].atan2(r[(2, 2)]));
    let yaw = wrap_angle(r[(1, 0)].atan2(r[(0, 0)]));
    [roll, pitch, yaw]
}

/// `Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn rotation_from_euler(euler: &[f64; 3]) -> Mat3 {
    let [roll, pitch, yaw] = *euler;
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Mat3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

fn wrap_angle(a: f64) -> f64 {
    if a <= -std::f64::consts::PI {
        a + 2.0 * std::f64::consts::PI
    } else {
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub position: f64,
    pub velocity: f64,
    pub action: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            position: 1.0,
            velocity: 0.5,
            action: 1e-5,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("position", self.position), ("velocity", self.velocity), ("action", self.action)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidConfig(format!("reward.{name} must be non-negative, got {w}")));
            }
        }
        Ok(())
    }
}

/// `-w_p |p| - w_v |v| - w_a |a|`, with `p` measured from the target.
pub fn reward_total(p: &Vec3, v: &Vec3, a: &Action, weights: &RewardWeights) -> f64 {
    -weights.position * p.norm() - weights.velocity * v.norm() - weights.action * a.norm()
}

/// Piecewise-constant wind speed over the global timestep counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindSchedule {
    /// Timesteps per segment.
    pub segment_length: u64,
    /// m/s, one per segment; the last one persists.
    pub speeds: Vec<f64>,
    /// World-frame wind direction used when `random_direction` is off.
    pub direction: [f64; 3],
    /// Draw a fresh horizontal direction for every segment.
    pub random_direction: bool,
}

impl Default for WindSchedule {
    fn default() -> Self {
        Self {
            segment_length: 2_000_000,
            speeds: vec![3.0, 2.0, 2.5, 1.5, 2.5],
            direction: [1.0, 0.0, 0.0],
            random_direction: false,
        }
    }
}

impl WindSchedule {
    pub fn constant(speed: f64) -> Self {
        Self {
            segment_length: i64::MAX as u64,
            speeds: vec![speed],
            ..Self::default()
        }
    }

    pub fn still_air() -> Self {
        Self::constant(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.speeds.is_empty() {
            return Err(Error::InvalidConfig("wind.speeds must not be empty".into()));
        }
        if self.segment_length == 0 {
            return Err(Error::InvalidConfig("wind.segment_length must be positive".into()));
        }
        if self.speeds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidConfig("wind.speeds must be non-negative".into()));
        }
        let d = Vec3::from(self.direction);
        if !self.random_direction && !(d.norm().is_finite() && d.norm() > 0.0) {
            return Err(Error::InvalidConfig("wind.direction must be a non-zero vector".into()));
        }
        Ok(())
    }

    pub fn segment_index(&self, global_step: u64) -> usize {
        ((global_step / self.segment_length) as usize).min(self.speeds.len() - 1)
    }

    pub fn speed_at(&self, global_step: u64) -> f64 {
        self.speeds[self.segment_index(global_step)]
    }

    /// Unit wind direction for the segment containing `global_step`.
    pub fn direction_at(&self, global_step: u64, seed: u64) -> Vec3 {
        if self.random_direction {
            let segment = self.segment_index(global_step) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995_u64.wrapping_mul(segment + 1));
            let heading: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            Vec3::new(heading.cos(), heading.sin(), 0.0)
        } else {
            Vec3::from(self.direction).normalize()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    /// Half-width of the cube initial positions are drawn from (m).
    pub init_position_range: f64,
    /// Episode terminates once the robot is farther than this from the target (m).
    pub termination_radius: f64,
    pub target: [f64; 3],
    /// Control and integration period (s).
    pub dt: f64,
    /// Added to the reward of a step that ends the episode by termination or crash.
    pub crash_penalty: f64,
    /// On termination, also charge every remaining step of the episode at the
    /// boundary rate `-w_p * termination_radius`, so leaving early never pays.
    pub charge_remaining_steps: bool,
    pub normalize_observations: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 500,
            init_position_range: 2.0,
            termination_radius: 5.0,
            target: [0.0; 3],
            dt: 0.01,
            crash_penalty: 0.0,
            charge_remaining_steps: true,
            normalize_observations: false,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("episode.max_steps must be positive".into()));
        }
        if !(self.init_position_range.is_finite() && self.init_position_range >= 0.0) {
            return Err(Error::InvalidConfig("episode.init_position_range must be non-negative".into()));
        }
        if !(self.termination_radius.is_finite() && self.termination_radius > 0.0) {
            return Err(Error::InvalidConfig("episode.termination_radius must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt <= dynamics::MAX_DT) {
            return Err(Error::InvalidConfig(format!("episode.dt must lie in (0, {}]", dynamics::MAX_DT)));
        }
        if !(self.crash_penalty.is_finite() && self.crash_penalty <= 0.0) {
            return Err(Error::InvalidConfig("episode.crash_penalty must be <= 0".into()));
        }
        if self.target.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("episode.target must be finite".into()));
        }
        Ok(())
    }

    /// Number of control steps in `seconds` of simulated time.
    pub fn steps_in(&self, seconds: f64) -> usize {
        (seconds / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Episode hit `max_steps`.
    pub truncated: bool,
    /// Episode left the termination radius or the simulation failed.
    pub terminated: bool,
    /// Integration diverged or the attitude became invalid.
    pub crashed: bool,
    pub wind_speed: f64,
    /// Reward before any crash penalty.
    pub task_reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Everything a [`HoverEnv`] needs apart from its random stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub robot: RobotParams,
    pub reward: RewardWeights,
    pub wind: WindSchedule,
    pub episode: EpisodeConfig,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        self.reward.validate()?;
        self.wind.validate()?;
        self.episode.validate()
    }
}

/// One quadrotor hover episode stream with its own seeded RNG.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HoverEnv {
    spec: EnvSpec,
    seed: u64,
    rng: ChaCha8Rng,
    state: RobotState,
    motors: MotorState,
    wind_velocity: Vec3,
    wind_speed: f64,
    steps: usize,
    active: bool,
}

impl HoverEnv {
    pub fn new(spec: EnvSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let motors = MotorState::hover(&spec.robot);
        Ok(Self {
            spec,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: RobotState::default(),
            motors,
            wind_velocity: Vec3::zeros(),
            wind_speed: 0.0,
            steps: 0,
            active: false,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn motors(&self) -> &MotorState {
        &self.motors
    }

    pub fn wind_speed(&self) -> f64 {
        self.wind_speed
    }

    /// World-frame air velocity during the current episode.
    pub fn wind_velocity(&self) -> Vec3 {
        self.wind_velocity
    }

    pub fn elapsed_steps(&self) -> usize {
        self.steps
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Starts an episode: uniform position in the init cube, at rest, level,
    /// motors at hover thrust, wind picked from the schedule at `global_step`.
    pub fn reset(&mut self, global_step: u64) -> Observation {
        let half = self.spec.episode.init_position_range;
        let target = Vec3::from(self.spec.episode.target);
        let offset = if half > 0.0 {
            Vec3::from_fn(|_, _| self.rng.random_range(-half..=half))
        } else {
            Vec3::zeros()
        };
        self.reset_to(RobotState::at_rest(target + offset), global_step)
    }

    /// Starts an episode from an explicit state.
    pub fn reset_to(&mut self, state: RobotState, global_step: u64) -> Observation {
        self.state = state;
        self.motors = MotorState::hover(&self.spec.robot);
        self.wind_speed = self.spec.wind.speed_at(global_step);
        self.wind_velocity = self.spec.wind.direction_at(global_step, self.seed) * self.wind_speed;
        self.steps = 0;
        self.active = true;
        self.observe()
    }

    pub fn observe(&self) -> Observation {
        let mut obs = Observation::from_state(&self.state);
        let target = self.spec.episode.target;
        for (x, t) in obs.0.iter_mut().zip(target) {
            *x -= t;
        }
        if self.spec.episode.normalize_observations {
            for (x, s) in obs.0.iter_mut().zip(OBS_SCALE) {
                *x /= s;
            }
        }
        obs
    }

    pub fn step(&mut self, action: &Action) -> Transition {
        let a = action.clipped();
        let cmd = a.motor_thrusts(&self.spec.robot);
        let ep = &self.spec.episode;
        self.steps += 1;
        let mut info = StepInfo {
            wind_speed: self.wind_speed,
            ..StepInfo::default()
        };
        match dynamics::step_motors(&self.state, &self.motors, &cmd, &self.wind_velocity, ep.dt, &self.spec.robot) {
            Ok((s, m)) => {
                self.state = s;
                self.motors = m;
            }
            Err(_) => {
                info.crashed = true;
            }
        }
        let target = Vec3::from(ep.target);
        let offset = self.state.position - target;
        info.task_reward = reward_total(&offset, &self.state.velocity, &a, &self.spec.reward);
        if !info.crashed && !(self.state.rotation.iter().all(|x| x.is_finite()) && info.task_reward.is_finite()) {
            info.crashed = true;
        }
        info.terminated = info.crashed || offset.norm() > ep.termination_radius;
        info.truncated = !info.terminated && self.steps >= ep.max_steps;
        let mut reward = info.task_reward;
        if info.crashed || !reward.is_finite() {
            reward = -(self.spec.reward.position * ep.termination_radius);
        }
        if info.terminated {
            reward += ep.crash_penalty;
            if ep.charge_remaining_steps {
                let remaining = ep.max_steps.saturating_sub(self.steps) as f64;
                reward -= remaining * self.spec.reward.position * ep.termination_radius;
            }
        }
        let done = info.terminated || info.truncated;
        if done {
            self.active = false;
        }
        let mut observation = self.observe();
        if !observation.is_finite() {
            observation = Observation([0.0; OBS_DIM]);
        }
        Transition {
            observation,
            reward,
            done,
            info,
        }
    }
}

/// Per-step log of an episode for plotting.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecorder {
    rows: Vec<TrajectoryRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub reward: f64,
}

impl TrajectoryRecorder {
    pub fn push(&mut self, t: f64, state: &RobotState, action: &Action, reward: f64) {
        let o = Observation::from_state(state).0;
        let a = action.clipped().0;
        self.rows.push(TrajectoryRow {
            t,
            x: o[0],
            y: o[1],
            z: o[2],
            vx: o[3],
            vy: o[4],
            vz: o[5],
            roll: o[6],
            pitch: o[7],
            yaw: o[8],
            wx: o[9],
            wy: o[10],
            wz: o[11],
            a0: a[0],
            a1: a[1],
            a2: a[2],
            a3: a[3],
            reward,
        });
    }

    pub fn rows(&self) -> &[TrajectoryRow] {
        &self.rows
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("<trajectory>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

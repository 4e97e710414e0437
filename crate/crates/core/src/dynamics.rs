//! Rigid-body quadrotor dynamics.
//!
//! The state is integrated in the form
//!
//! ```text
//! p' = v
//! m v' = -m g e3 + R (f + d)
//! R' = R S(w)
//! w' = J^-1 (tau - w x J w)
//! ```
//!
//! with `f`, `tau` and `d` in the body frame. Each of the four motors is a
//! first-order lag on its thrust; the lag states are integrated together with
//! the rigid body by a classic RK4 step, after which `R` is re-orthonormalized.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub const NUM_MOTORS: usize = 4;

/// Largest integration step accepted by [`step`].
pub const MAX_DT: f64 = 0.05;

/// Physical state of the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    /// Position, world frame (m).
    pub position: Vec3,
    /// Linear velocity, world frame (m/s).
    pub velocity: Vec3,
    /// Attitude, body to world.
    pub rotation: Mat3,
    /// Angular velocity, body frame (rad/s).
    pub angular_velocity: Vec3,
}

impl Default for RobotState {
    fn default() -> Self {
        Self::at_rest(Vec3::zeros())
    }
}

impl RobotState {
    pub fn at_rest(position: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            rotation: Mat3::identity(),
            angular_velocity: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
            && self.rotation.iter().all(|x| x.is_finite())
            && self.angular_velocity.iter().all(|x| x.is_finite())
    }
}

/// Time derivative of a [`RobotState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub position: Vec3,
    pub velocity: Vec3,
    pub rotation: Mat3,
    pub angular_velocity: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotParams {
    /// kg
    pub mass: f64,
    /// Diagonal of the inertia matrix (kg m^2).
    pub inertia: [f64; 3],
    /// Distance from the center of mass to each rotor (m).
    pub arm_length: f64,
    /// Nominal thrust-to-weight ratio. Informational; `max_thrust` is what limits the motors.
    pub thrust_to_weight: f64,
    /// Total thrust of all four motors at saturation (N).
    pub max_thrust: f64,
    /// Motor first-order lag time constant (s).
    pub motor_time_constant: f64,
    /// m/s^2
    pub gravity: f64,
    /// Yaw reaction torque per unit rotor thrust (N m / N).
    pub yaw_torque_coefficient: f64,
    /// Linear drag coefficient against the relative air velocity (N s / m).
    pub drag_coefficient: f64,
}

impl Default for RobotParams {
    /// Crazyflie-class vehicle.
    fn default() -> Self {
        Self {
            mass: 0.03,
            inertia: [1.43e-5, 1.43e-5, 2.89e-5],
            arm_length: 0.043,
            thrust_to_weight: 1.95,
            max_thrust: 0.575,
            motor_time_constant: 0.05,
            gravity: 9.81,
            yaw_torque_coefficient: 0.005,
            drag_coefficient: 0.01,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mass", self.mass),
            ("arm_length", self.arm_length),
            ("max_thrust", self.max_thrust),
            ("motor_time_constant", self.motor_time_constant),
            ("gravity", self.gravity),
            ("yaw_torque_coefficient", self.yaw_torque_coefficient),
            ("thrust_to_weight", self.thrust_to_weight),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig(format!("robot.{name} must be positive, got {value}")));
            }
        }
        if self.inertia.iter().any(|j| !(j.is_finite() && *j > 0.0)) {
            return Err(Error::InvalidConfig("robot.inertia components must be positive".into()));
        }
        if !(self.drag_coefficient.is_finite() && self.drag_coefficient >= 0.0) {
            return Err(Error::InvalidConfig("robot.drag_coefficient must be non-negative".into()));
        }
        if self.max_thrust <= self.hover_thrust() {
            return Err(Error::InvalidConfig(format!(
                "robot.max_thrust {} cannot hold the vehicle (weight {})",
                self.max_thrust,
                self.hover_thrust()
            )));
        }
        Ok(())
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn max_motor_thrust(&self) -> f64 {
        self.max_thrust / NUM_MOTORS as f64
    }

    /// Per-axis torque limits: roll and pitch from one saturated motor on the arm,
    /// yaw from the reaction torque of one saturated motor.
    pub fn torque_limits(&self) -> Vec3 {
        let f = self.max_motor_thrust();
        Vec3::new(self.arm_length * f, self.arm_length * f, self.yaw_torque_coefficient * f)
    }

    fn inertia_vec(&self) -> Vec3 {
        Vec3::from(self.inertia)
    }
}

/// Body-frame thrust and torque.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchCommand {
    /// `[0, 0, f_z]`, N
    pub thrust: Vec3,
    /// N m
    pub torque: Vec3,
}

impl WrenchCommand {
    pub fn new(thrust_z: f64, torque: Vec3) -> Self {
        Self {
            thrust: Vec3::new(0.0, 0.0, thrust_z),
            torque,
        }
    }

    pub fn hover(params: &RobotParams) -> Self {
        Self::new(params.hover_thrust(), Vec3::zeros())
    }

    /// Clamps collective thrust to `[0, max_thrust]` and torques to the per-axis limits.
    pub fn saturate(&self, params: &RobotParams) -> Self {
        let lim = params.torque_limits();
        let torque = Vec3::from_fn(|i, _| self.torque[i].clamp(-lim[i], lim[i]));
        Self::new(self.thrust.z.clamp(0.0, params.max_thrust), torque)
    }
}

/// Actual per-motor thrusts (N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorState {
    pub thrusts: [f64; NUM_MOTORS],
}

impl MotorState {
    pub fn idle() -> Self {
        Self { thrusts: [0.0; NUM_MOTORS] }
    }

    pub fn hover(params: &RobotParams) -> Self {
        Self {
            thrusts: [params.hover_thrust() / NUM_MOTORS as f64; NUM_MOTORS],
        }
    }
}

// X configuration: rotor i sits at angle 45 + 90 i degrees, spin alternating.
const ROTOR_X: [f64; NUM_MOTORS] = [1.0, -1.0, -1.0, 1.0];
const ROTOR_Y: [f64; NUM_MOTORS] = [1.0, 1.0, -1.0, -1.0];
const ROTOR_SPIN: [f64; NUM_MOTORS] = [1.0, -1.0, 1.0, -1.0];

/// Maps per-motor thrusts to the body wrench.
pub fn mix(thrusts: &[f64; NUM_MOTORS], params: &RobotParams) -> WrenchCommand {
    let d = params.arm_length * std::f64::consts::FRAC_1_SQRT_2;
    let k = params.yaw_torque_coefficient;
    let mut fz = 0.0;
    let mut tau = Vec3::zeros();
    for i in 0..NUM_MOTORS {
        let f = thrusts[i];
        fz += f;
        tau.x += d * ROTOR_Y[i] * f;
        tau.y -= d * ROTOR_X[i] * f;
        tau.z += k * ROTOR_SPIN[i] * f;
    }
    WrenchCommand::new(fz, tau)
}

/// Inverse of [`mix`]. The allocation rows are mutually orthogonal, so the
/// inverse is the transpose scaled by the row norms.
pub fn allocate(cmd: &WrenchCommand, params: &RobotParams) -> [f64; NUM_MOTORS] {
    let d = params.arm_length * std::f64::consts::FRAC_1_SQRT_2;
    let k = params.yaw_torque_coefficient;
    let mut out = [0.0; NUM_MOTORS];
    for (i, f) in out.iter_mut().enumerate() {
        *f = cmd.thrust.z / 4.0 + ROTOR_Y[i] * cmd.torque.x / (4.0 * d) - ROTOR_X[i] * cmd.torque.y / (4.0 * d)
            + ROTOR_SPIN[i] * cmd.torque.z / (4.0 * k);
    }
    out
}

pub fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rigid-body time derivative for a given wrench and body-frame disturbance force.
pub fn derivative(
    state: &RobotState,
    cmd: &WrenchCommand,
    disturbance: &Vec3,
    params: &RobotParams,
) -> Result<StateDerivative> {
    if !state.is_finite() {
        return Err(Error::NonFinite("robot state"));
    }
    if !(cmd.thrust.iter().chain(cmd.torque.iter()).all(|x| x.is_finite())) {
        return Err(Error::NonFinite("wrench command"));
    }
    if !disturbance.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("disturbance force"));
    }
    Ok(rigid_body_derivative(state, cmd, disturbance, params))
}

fn rigid_body_derivative(state: &RobotState, cmd: &WrenchCommand, d: &Vec3, params: &RobotParams) -> StateDerivative {
    let m = params.mass;
    let j = params.inertia_vec();
    let w = &state.angular_velocity;
    let body_force = cmd.thrust + d;
    let accel = state.rotation * body_force / m - Vec3::new(0.0, 0.0, params.gravity);
    let jw = j.component_mul(w);
    let w_dot = (cmd.torque - w.cross(&jw)).component_div(&j);
    StateDerivative {
        position: state.velocity,
        velocity: accel,
        rotation: state.rotation * skew(w),
        angular_velocity: w_dot,
    }
}

/// Body-frame aerodynamic disturbance from a uniform wind field.
///
/// Linear drag on the air-relative velocity, computed in the world frame and
/// rotated into the body frame.
pub fn wind_force(wind_speed: f64, direction: &Vec3, state: &RobotState, params: &RobotParams) -> Vec3 {
    disturbance_from_wind(&(direction * wind_speed), state, params)
}

fn disturbance_from_wind(wind: &Vec3, state: &RobotState, params: &RobotParams) -> Vec3 {
    let world = params.drag_coefficient * (wind - state.velocity);
    state.rotation.transpose() * world
}

/// Gram-Schmidt on the columns; the third column is rebuilt as a cross product
/// so the result is a proper rotation.
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    let c0 = r.column(0).normalize();
    let c1 = r.column(1) - c0 * c0.dot(&r.column(1));
    let c1 = c1.normalize();
    let c2 = c0.cross(&c1);
    Mat3::from_columns(&[c0, c1, c2])
}

#[derive(Clone, Copy)]
struct Augmented {
    body: RobotState,
    motors: [f64; NUM_MOTORS],
}

impl Augmented {
    fn offset(&self, k: &(StateDerivative, [f64; NUM_MOTORS]), h: f64) -> Self {
        let (d, m) = k;
        let mut motors = self.motors;
        for (x, dx) in motors.iter_mut().zip(m) {
            *x += h * dx;
        }
        Self {
            body: RobotState {
                position: self.body.position + d.position * h,
                velocity: self.body.velocity + d.velocity * h,
                rotation: self.body.rotation + d.rotation * h,
                angular_velocity: self.body.angular_velocity + d.angular_velocity * h,
            },
            motors,
        }
    }
}

fn augmented_flow(
    x: &Augmented,
    motor_cmd: &[f64; NUM_MOTORS],
    wind: &Vec3,
    params: &RobotParams,
) -> (StateDerivative, [f64; NUM_MOTORS]) {
    let wrench = mix(&x.motors, params);
    let d = disturbance_from_wind(wind, &x.body, params);
    let body = rigid_body_derivative(&x.body, &wrench, &d, params);
    let mut motor_dot = [0.0; NUM_MOTORS];
    for i in 0..NUM_MOTORS {
        motor_dot[i] = (motor_cmd[i] - x.motors[i]) / params.motor_time_constant;
    }
    (body, motor_dot)
}

/// Advances the vehicle by `dt` under a wrench command, allocated to the
/// motors and saturated at their thrust limits.
pub fn step(
    state: &RobotState,
    motors: &MotorState,
    cmd: &WrenchCommand,
    wind: &Vec3,
    dt: f64,
    params: &RobotParams,
) -> Result<(RobotState, MotorState)> {
    let per_motor = allocate(&cmd.saturate(params), params);
    step_motors(state, motors, &per_motor, wind, dt, params)
}

/// Advances the vehicle by `dt` with per-motor thrust commands (N). `wind` is
/// the world-frame air velocity.
pub fn step_motors(
    state: &RobotState,
    motors: &MotorState,
    motor_cmd: &[f64; NUM_MOTORS],
    wind: &Vec3,
    dt: f64,
    params: &RobotParams,
) -> Result<(RobotState, MotorState)> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(Error::InvalidConfig(format!("integration step {dt} outside (0, {MAX_DT}]")));
    }
    if !state.is_finite() {
        return Err(Error::NonFinite("robot state"));
    }
    if !wind.iter().chain(motor_cmd.iter()).all(|x| x.is_finite()) {
        return Err(Error::NonFinite("step input"));
    }
    let f_max = params.max_motor_thrust();
    let mut cmd = *motor_cmd;
    for c in cmd.iter_mut() {
        *c = c.clamp(0.0, f_max);
    }

    let x0 = Augmented {
        body: *state,
        motors: motors.thrusts,
    };
    let k1 = augmented_flow(&x0, &cmd, wind, params);
    let k2 = augmented_flow(&x0.offset(&k1, dt / 2.0), &cmd, wind, params);
    let k3 = augmented_flow(&x0.offset(&k2, dt / 2.0), &cmd, wind, params);
    let k4 = augmented_flow(&x0.offset(&k3, dt), &cmd, wind, params);

    let h6 = dt / 6.0;
    let comb3 = |a: Vec3, b: Vec3, c: Vec3, d: Vec3| (a + (b + c) * 2.0 + d) * h6;
    let body = RobotState {
        position: state.position + comb3(k1.0.position, k2.0.position, k3.0.position, k4.0.position),
        velocity: state.velocity + comb3(k1.0.velocity, k2.0.velocity, k3.0.velocity, k4.0.velocity),
        rotation: orthonormalize(
            &(state.rotation + (k1.0.rotation + (k2.0.rotation + k3.0.rotation) * 2.0 + k4.0.rotation) * h6),
        ),
        angular_velocity: state.angular_velocity
            + comb3(
                k1.0.angular_velocity,
                k2.0.angular_velocity,
                k3.0.angular_velocity,
                k4.0.angular_velocity,
            ),
    };
    let mut thrusts = motors.thrusts;
    for (i, f) in thrusts.iter_mut().enumerate() {
        *f = (*f + h6 * (k1.1[i] + 2.0 * (k2.1[i] + k3.1[i]) + k4.1[i])).clamp(0.0, f_max);
    }
    if !body.is_finite() || thrusts.iter().any(|f| !f.is_finite()) {
        return Err(Error::SimulationDiverged(format!(
            "non-finite state after step from p = {:?}",
            state.position.as_slice()
        )));
    }
    Ok((body, MotorState { thrusts }))
}

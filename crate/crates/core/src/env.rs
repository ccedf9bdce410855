//! The stochastic pendulum benchmark and its feedback-linearization
//! controller, plus the environment abstraction used by the training loops.
//!
//! Continuous-time dynamics near the upper fixed point:
//!
//!   phi_ddot = (torque + m g l sin(phi) - b phi_dot) / (m l^2)
//!
//! Discrete transitions integrate this over one sampling interval with the
//! action held constant (fixed-step RK4) and add homoscedastic Gaussian
//! process noise: p(. | s, a) = N(mu(s, a), Sigma).

use rand::{Rng, RngCore};

use crate::buffer::Transition;
use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

/// Physical constants of the pendulum; defaults follow the benchmark setup
/// (mass 0.1, length 1, g 9.81, viscous friction 0.1, dt 0.01, process
/// noise covariance diag(1e-6, 1e-3)).
#[derive(Debug, Clone)]
pub struct PendulumParams<T> {
    pub mass: T,
    pub length: T,
    pub gravity: T,
    pub friction: T,
    pub dt: T,
    pub process_noise_var: [T; 2],
    /// RK4 substeps per sampling interval.
    pub integrator_substeps: usize,
}

impl<T: Scalar> Default for PendulumParams<T> {
    fn default() -> Self {
        Self {
            mass: T::of(0.1),
            length: T::of(1.0),
            gravity: T::of(9.81),
            friction: T::of(0.1),
            dt: T::of(0.01),
            process_noise_var: [T::of(1e-6), T::of(1e-3)],
            integrator_substeps: 10,
        }
    }
}

/// Feedback-linearization gains and the desired fixed point (the upright
/// rest point by default, with under-damped error dynamics).
#[derive(Debug, Clone)]
pub struct ControllerParams<T> {
    pub k_p: T,
    pub k_d: T,
    pub desired_angle: T,
    pub desired_velocity: T,
    pub desired_acceleration: T,
}

impl<T: Scalar> Default for ControllerParams<T> {
    fn default() -> Self {
        Self {
            k_p: T::of(25.0),
            k_d: T::of(1.0),
            desired_angle: T::zero(),
            desired_velocity: T::zero(),
            desired_acceleration: T::zero(),
        }
    }
}

/// Angular acceleration of the free dynamics under an applied torque.
pub fn pendulum_accel<T: Scalar>(p: &PendulumParams<T>, phi: T, phidot: T, torque: T) -> T {
    let ml2 = p.mass * p.length * p.length;
    (torque + p.mass * p.gravity * p.length * phi.sin() - p.friction * phidot) / ml2
}

/// Deterministic mean next state: RK4 over one sampling interval with the
/// torque held constant.
pub fn pendulum_mean_step<T: Scalar>(
    p: &PendulumParams<T>,
    s: [T; 2],
    torque: T,
) -> Result<[T; 2]> {
    if !all_finite(&s) || !torque.is_finite() {
        return Err(Error::NonFinite { context: "pendulum_mean_step input" });
    }
    let n = p.integrator_substeps.max(1);
    let h = p.dt / T::of(n as f64);
    let mut phi = s[0];
    let mut phidot = s[1];
    let deriv = |phi: T, phidot: T| -> (T, T) { (phidot, pendulum_accel(p, phi, phidot, torque)) };
    let half = T::of(0.5);
    let sixth = T::of(1.0 / 6.0);
    let two = T::of(2.0);
    for _ in 0..n {
        let (k1p, k1v) = deriv(phi, phidot);
        let (k2p, k2v) = deriv(phi + half * h * k1p, phidot + half * h * k1v);
        let (k3p, k3v) = deriv(phi + half * h * k2p, phidot + half * h * k2v);
        let (k4p, k4v) = deriv(phi + h * k3p, phidot + h * k3v);
        phi += h * sixth * (k1p + two * k2p + two * k3p + k4p);
        phidot += h * sixth * (k1v + two * k2v + two * k3v + k4v);
    }
    Ok([phi, phidot])
}

/// One stochastic transition: mean step plus process noise; the reward is
/// evaluated at the commanded torque. `done` never fires here; episode
/// limits are the environment wrapper's job.
pub fn pendulum_step<T: Scalar, R: Rng + ?Sized>(
    p: &PendulumParams<T>,
    s: [T; 2],
    torque: T,
    rng: &mut R,
) -> Result<StepResult<T>> {
    let mean = pendulum_mean_step(p, s, torque)?;
    let next = [
        mean[0] + p.process_noise_var[0].sqrt() * T::standard_normal(rng),
        mean[1] + p.process_noise_var[1].sqrt() * T::standard_normal(rng),
    ];
    Ok(StepResult {
        next_state: next,
        reward: reward(s, torque),
        done: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<T> {
    pub next_state: [T; 2],
    pub reward: T,
    pub done: bool,
}

/// Feedback-linearization control law:
/// torque = m l^2 (acc_d + K_D (vel_d - phidot) + K_P (ang_d - phi))
///          - m g l sin(phi) + b phidot.
pub fn fl_controller<T: Scalar>(cp: &ControllerParams<T>, pp: &PendulumParams<T>, s: [T; 2]) -> T {
    let ml2 = pp.mass * pp.length * pp.length;
    ml2 * (cp.desired_acceleration
        + cp.k_d * (cp.desired_velocity - s[1])
        + cp.k_p * (cp.desired_angle - s[0]))
        - pp.mass * pp.gravity * pp.length * s[0].sin()
        + pp.friction * s[1]
}

/// Quadratic stabilization reward, maximal (zero) at the upright rest point
/// with zero torque: r = -(phi^2 + 0.1 phidot^2 + 0.001 torque^2).
pub fn reward<T: Scalar>(s: [T; 2], torque: T) -> T {
    -(s[0] * s[0] + T::of(0.1) * s[1] * s[1] + T::of(0.001) * torque * torque)
}

/// Ten closed-loop trajectories of 170 noisy steps from (3, 0) under the
/// feedback-linearization controller; the actions stored are raw torques.
pub fn generate_spiral_dataset<T: Scalar, R: Rng + ?Sized>(
    pp: &PendulumParams<T>,
    cp: &ControllerParams<T>,
    rng: &mut R,
) -> Vec<Transition<T>> {
    spiral_trajectories(pp, cp, 10, 170, rng)
}

pub fn spiral_trajectories<T: Scalar, R: Rng + ?Sized>(
    pp: &PendulumParams<T>,
    cp: &ControllerParams<T>,
    trajectories: usize,
    steps: usize,
    rng: &mut R,
) -> Vec<Transition<T>> {
    let mut out = Vec::with_capacity(trajectories * steps);
    for _ in 0..trajectories {
        let mut s = [T::of(3.0), T::zero()];
        for _ in 0..steps {
            let torque = fl_controller(cp, pp, s);
            let step = pendulum_step(pp, s, torque, rng).expect("finite closed-loop state");
            out.push(Transition {
                state: s.to_vec(),
                action: vec![torque],
                reward: step.reward,
                next_state: step.next_state.to_vec(),
                done: false,
            });
            s = step.next_state;
        }
    }
    out
}

/// CSV export of a pendulum transition set, 17 significant digits per value.
/// Header: `phi,phidot,torque,reward,phi_next,phidot_next`.
pub fn dataset_to_csv<T: Scalar>(transitions: &[Transition<T>]) -> String {
    let mut out = String::from("phi,phidot,torque,reward,phi_next,phidot_next\n");
    for t in transitions {
        let f = |x: T| format!("{:.16e}", x.as_f64());
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            f(t.state[0]),
            f(t.state[1]),
            f(t.action[0]),
            f(t.reward),
            f(t.next_state[0]),
            f(t.next_state[1]),
        ));
    }
    out
}

/// Interface the training loops run against. Actions arrive in agent units,
/// componentwise in [-1, 1]; the environment applies its own scaling.
pub trait Environment<T: Scalar> {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn episode_limit(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<T>;
    fn step(&mut self, action: &[T], rng: &mut dyn RngCore) -> Result<StepOutcome<T>>;
    /// Known reward function r(s, a) in agent action units.
    fn reward(&self, state: &[T], action: &[T]) -> T;
}

#[derive(Debug, Clone)]
pub struct StepOutcome<T> {
    pub next_state: Vec<T>,
    pub reward: T,
    /// Episode end (step limit); stored transitions treat this as a timeout,
    /// not an absorbing terminal.
    pub done: bool,
}

/// RL-facing pendulum: torque-limited agent actions, uniform start states,
/// fixed episode length with no state-based termination.
#[derive(Debug, Clone)]
pub struct PendulumEnv<T> {
    pub params: PendulumParams<T>,
    pub torque_limit: T,
    pub start_angle_range: (T, T),
    pub start_velocity_range: (T, T),
    pub step_limit: usize,
    state: [T; 2],
    steps: usize,
}

impl<T: Scalar> PendulumEnv<T> {
    pub fn new(params: PendulumParams<T>) -> Self {
        Self {
            params,
            torque_limit: T::of(5.0),
            start_angle_range: (T::of(-3.0), T::of(3.0)),
            start_velocity_range: (T::of(-1.0), T::of(1.0)),
            step_limit: 200,
            state: [T::zero(), T::zero()],
            steps: 0,
        }
    }

    pub fn state(&self) -> [T; 2] {
        self.state
    }

    fn torque(&self, action: &[T]) -> T {
        self.torque_limit * action[0]
    }
}

impl<T: Scalar> Environment<T> for PendulumEnv<T> {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn episode_limit(&self) -> usize {
        self.step_limit
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<T> {
        let (lo_a, hi_a) = self.start_angle_range;
        let (lo_v, hi_v) = self.start_velocity_range;
        self.state = [rng.gen_range(lo_a..hi_a), rng.gen_range(lo_v..hi_v)];
        self.steps = 0;
        self.state.to_vec()
    }

    fn step(&mut self, action: &[T], rng: &mut dyn RngCore) -> Result<StepOutcome<T>> {
        if action.len() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: action.len() });
        }
        let torque = self.torque(action);
        let result = pendulum_step(&self.params, self.state, torque, rng)?;
        self.state = result.next_state;
        self.steps += 1;
        Ok(StepOutcome {
            next_state: self.state.to_vec(),
            reward: result.reward,
            done: self.steps >= self.step_limit,
        })
    }

    fn reward(&self, state: &[T], action: &[T]) -> T {
        reward([state[0], state[1]], self.torque(action))
    }
}

/// The feedback-linearization controller as a rollout policy. Actions are
/// raw torques, matching the toy datasets it generates.
#[derive(Debug, Clone)]
pub struct FlControllerPolicy<T> {
    pub controller: ControllerParams<T>,
    pub pendulum: PendulumParams<T>,
}

impl<T: Scalar> Default for FlControllerPolicy<T> {
    fn default() -> Self {
        Self {
            controller: ControllerParams::default(),
            pendulum: PendulumParams::default(),
        }
    }
}

impl<T: Scalar> crate::rollout::RolloutPolicy<T> for FlControllerPolicy<T> {
    fn action_dim(&self) -> usize {
        1
    }

    fn sample_action(&self, state: &[T], _rng: &mut dyn RngCore) -> Result<Vec<T>> {
        Ok(vec![fl_controller(
            &self.controller,
            &self.pendulum,
            [state[0], state[1]],
        )])
    }
}

/// Current-state hook for wrappers that must re-evaluate rewards.
pub trait Observe<T> {
    fn observe(&self) -> Vec<T>;
}

impl<T: Scalar> Observe<T> for PendulumEnv<T> {
    fn observe(&self) -> Vec<T> {
        self.state.to_vec()
    }
}

/// Wraps an environment so that unobserved Gaussian noise is added to every
/// applied action. Rewards and stored transitions keep the agent's intended
/// action; the noise acts purely as process noise.
#[derive(Debug, Clone)]
pub struct NoisyActionEnv<T, E> {
    pub inner: E,
    pub sigma: T,
}

impl<T: Scalar, E: Environment<T> + Observe<T>> NoisyActionEnv<T, E> {
    pub fn new(inner: E, sigma: T) -> Result<Self> {
        if sigma < T::zero() {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: "action-noise std must be non-negative".into(),
            });
        }
        Ok(Self { inner, sigma })
    }
}

impl<T: Scalar, E: Environment<T> + Observe<T>> Observe<T> for NoisyActionEnv<T, E> {
    fn observe(&self) -> Vec<T> {
        self.inner.observe()
    }
}

impl<T: Scalar, E: Environment<T> + Observe<T>> Environment<T> for NoisyActionEnv<T, E> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn episode_limit(&self) -> usize {
        self.inner.episode_limit()
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<T> {
        self.inner.reset(rng)
    }

    fn step(&mut self, action: &[T], rng: &mut dyn RngCore) -> Result<StepOutcome<T>> {
        let applied: Vec<T> = action
            .iter()
            .map(|&a| a + self.sigma * T::standard_normal(rng))
            .collect();
        let before = self.inner.observe();
        let mut outcome = self.inner.step(&applied, rng)?;
        // Reward is re-evaluated at the intended action.
        outcome.reward = self.inner.reward(&before, action);
        Ok(outcome)
    }

    fn reward(&self, state: &[T], action: &[T]) -> T {
        self.inner.reward(state, action)
    }
}

//! Diagnostics on the toy system: the uncertainty/misalignment grid study
//! and the Monte-Carlo check of the monotonic-improvement bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use macura_core::env::{fl_controller, pendulum_mean_step, ControllerParams, PendulumParams};
use macura_core::gaussian::{tv_upper_bound, u_gjs, DiagGaussian};
use macura_core::model::DynamicsEnsemble;
use macura_core::rollout::RolloutPolicy;
use macura_core::Scalar;

use crate::HarnessError;

/// Uniform grid over the state box, row-major: `rows` angles by `cols`
/// angular velocities.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub phi_range: (f64, f64),
    pub phidot_range: (f64, f64),
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            phi_range: (-3.0, 3.0),
            phidot_range: (-16.0, 16.0),
            rows: 100,
            cols: 100,
        }
    }
}

impl GridSpec {
    pub fn cell(&self, i: usize, j: usize) -> (f64, f64) {
        let phi = if self.rows == 1 {
            self.phi_range.0
        } else {
            self.phi_range.0
                + (self.phi_range.1 - self.phi_range.0) * i as f64 / (self.rows - 1) as f64
        };
        let phidot = if self.cols == 1 {
            self.phidot_range.0
        } else {
            self.phidot_range.0
                + (self.phidot_range.1 - self.phidot_range.0) * j as f64 / (self.cols - 1) as f64
        };
        (phi, phidot)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-cell ensemble uncertainty, dynamics misalignment, and membership in
/// the trusted set for a given threshold.
#[derive(Debug, Clone)]
pub struct GridStudy {
    pub spec: GridSpec,
    pub kappa: f64,
    /// u_GJS at (s_ij, controller action).
    pub u_gjs: Vec<f64>,
    /// Misalignment d_ij = (1/E) sum_e sqrt(2) Hellinger(true kernel, member e).
    pub d_tv: Vec<f64>,
    pub in_e: Vec<bool>,
}

impl GridStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phi,phidot,u_gjs,d_tv,in_e\n");
        for i in 0..self.spec.rows {
            for j in 0..self.spec.cols {
                let (phi, phidot) = self.spec.cell(i, j);
                let k = i * self.spec.cols + j;
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    phi,
                    phidot,
                    self.u_gjs[k],
                    self.d_tv[k],
                    self.in_e[k] as u8
                ));
            }
        }
        out
    }

    /// Mean misalignment inside and outside the trusted set.
    pub fn mean_d_split(&self) -> (f64, f64) {
        let mut inside = (0.0, 0usize);
        let mut outside = (0.0, 0usize);
        for (d, &member) in self.d_tv.iter().zip(&self.in_e) {
            if member {
                inside.0 += d;
                inside.1 += 1;
            } else {
                outside.0 += d;
                outside.1 += 1;
            }
        }
        (
            inside.0 / inside.1.max(1) as f64,
            outside.0 / outside.1.max(1) as f64,
        )
    }

    /// The q-quantile of the grid's uncertainty values (order statistic).
    pub fn u_quantile(&self, q: f64) -> f64 {
        let mut sorted = self.u_gjs.clone();
        sorted.sort_by(f64::total_cmp);
        let k = ((q * sorted.len() as f64 - 1e-9).ceil() as usize).clamp(1, sorted.len());
        sorted[k - 1]
    }
}

/// Evaluates the trained model against the true transition kernel over the
/// grid: a_ij from the feedback controller, u_GJS per cell, and the
/// Hellinger TV bound averaged over members.
pub fn grid_study<T: Scalar>(
    model: &dyn DynamicsEnsemble<T>,
    controller: &ControllerParams<T>,
    pendulum: &PendulumParams<T>,
    spec: &GridSpec,
    kappa: f64,
) -> Result<GridStudy, HarnessError> {
    grid_study_scaled(model, controller, pendulum, spec, kappa, 1.0)
}

/// As [`grid_study`], but dividing the controller torque by `action_scale`
/// before it reaches the model (models from RL runs are trained on unit
/// actions, torque = torque_limit * a).
pub fn grid_study_scaled<T: Scalar>(
    model: &dyn DynamicsEnsemble<T>,
    controller: &ControllerParams<T>,
    pendulum: &PendulumParams<T>,
    spec: &GridSpec,
    kappa: f64,
    action_scale: f64,
) -> Result<GridStudy, HarnessError> {
    let mut u = Vec::with_capacity(spec.len());
    let mut d = Vec::with_capacity(spec.len());
    let e = model.num_members() as f64;
    let noise = [pendulum.process_noise_var[0], pendulum.process_noise_var[1]];

    for i in 0..spec.rows {
        for j in 0..spec.cols {
            let (phi, phidot) = spec.cell(i, j);
            let s = [T::of(phi), T::of(phidot)];
            let torque = fl_controller(controller, pendulum, s);
            let a = torque / T::of(action_scale);
            let pred = model.predict(&s, &[a])?;
            u.push(u_gjs(&pred).as_f64());

            let mean = pendulum_mean_step(pendulum, s, torque)?;
            let truth = DiagGaussian::new(mean.to_vec(), noise.to_vec())?;
            let mut acc = 0.0;
            for member in pred.members() {
                acc += tv_upper_bound(&truth, member)?.as_f64();
            }
            d.push(acc / e);
        }
    }
    if u.iter().chain(d.iter()).any(|x| !x.is_finite()) {
        return Err(HarnessError::Numerical(
            "non-finite grid-study cell value".into(),
        ));
    }
    let in_e = u.iter().map(|&x| x < kappa).collect();
    Ok(GridStudy {
        spec: spec.clone(),
        kappa,
        u_gjs: u,
        d_tv: d,
        in_e,
    })
}

/// How the worst-case misalignment over the trusted set is estimated.
pub enum DeltaPEstimate {
    /// Maximum of the per-cell Hellinger TV bound over grid cells in E
    /// (controller-policy diagnosis).
    Grid(GridSpec),
    /// Maximum over the states visited by the diagnostic's own model
    /// rollouts (learned-policy diagnosis).
    Visitation,
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    /// MC estimate of the (shifted-reward) return under the true dynamics,
    /// truncated at the coupled stopping time.
    pub eta_hat: f64,
    /// Same under the model dynamics.
    pub eta_tilde: f64,
    /// Model-side return truncated at the practical one-sided stopping time.
    pub eta_tilde_approx: f64,
    /// Estimated sup of the TV misalignment over the trusted set.
    pub delta_p_sup: f64,
    /// Accumulated worst-case misalignment bound (coupled stopping time).
    pub c_bound: f64,
    pub c_bound_approx: f64,
    /// |eta_hat - eta_tilde| <= C + 3 standard errors.
    pub holds: bool,
    pub holds_approx: bool,
    pub reward_shift: f64,
    pub r_max: f64,
    pub se_margin: f64,
    pub n_rollouts: usize,
    pub mean_stopping_time: f64,
}

struct Trajectory {
    rewards: Vec<f64>,
    /// First index t with s_t outside the trusted set (t counts states,
    /// s_0 excluded since starts are inside); `max_len + 1` if none.
    exit_step: usize,
}

fn membership<T: Scalar>(
    model: &dyn DynamicsEnsemble<T>,
    policy: &dyn RolloutPolicy<T>,
    s: &[T],
    kappa: f64,
    rng: &mut ChaCha8Rng,
) -> Result<bool, HarnessError> {
    let a = policy.sample_action(s, rng)?;
    let pred = model.predict(s, &a)?;
    Ok(u_gjs(&pred).as_f64() < kappa)
}

/// Monte-Carlo diagnostic of the improvement bound: coupled truncated
/// returns under the true kernel and the model from shared start states,
/// the misalignment bound C, and whether the bound holds within a
/// 3-standard-error margin.
#[allow(clippy::too_many_arguments)]
pub fn bound_check<T: Scalar>(
    model: &dyn DynamicsEnsemble<T>,
    policy: &dyn RolloutPolicy<T>,
    pendulum: &PendulumParams<T>,
    controller_for_grid: &ControllerParams<T>,
    start_candidates: &[Vec<T>],
    kappa: f64,
    gamma: f64,
    t_max: usize,
    n_rollouts: usize,
    delta_p: DeltaPEstimate,
    // torque_scale: torque applied to the true dynamics per unit of policy
    // action (1 for torque-unit policies and toy models, torque_limit for
    // RL agents whose actions live in (-1, 1)).
    torque_scale: f64,
    seed: u64,
) -> Result<BoundReport, HarnessError> {
    if kappa <= 0.0 {
        return Err(HarnessError::Config(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(HarnessError::Config(format!(
            "gamma must be in [0, 1), got {gamma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Start pool: candidates whose (s, a ~ pi) uncertainty is below kappa.
    let mut pool = Vec::new();
    for s in start_candidates {
        if membership(model, policy, s, kappa, &mut rng)? {
            pool.push(s.clone());
        }
    }
    if pool.is_empty() {
        return Err(macura_core::Error::NoStartStates.into());
    }

    let noise = [pendulum.process_noise_var[0], pendulum.process_noise_var[1]];
    let mut real_trajs = Vec::with_capacity(n_rollouts);
    let mut model_trajs = Vec::with_capacity(n_rollouts);
    let mut visited_model_states: Vec<Vec<T>> = Vec::new();

    for _ in 0..n_rollouts {
        let s0 = pool[rng.gen_range(0..pool.len())].clone();

        // True-dynamics branch.
        let mut s = [s0[0], s0[1]];
        let mut rewards = Vec::with_capacity(t_max);
        let mut exit_step = t_max + 1;
        for t in 0..t_max {
            let a = policy.sample_action(&s, &mut rng)?;
            let torque = T::of(torque_scale) * a[0];
            let r = macura_core::env::reward(s, torque);
            rewards.push(r.as_f64());
            let mean = pendulum_mean_step(pendulum, s, torque)?;
            s = [
                mean[0] + noise[0].sqrt() * T::standard_normal(&mut rng),
                mean[1] + noise[1].sqrt() * T::standard_normal(&mut rng),
            ];
            if exit_step > t_max && !membership(model, policy, &s, kappa, &mut rng)? {
                exit_step = t + 1;
                break;
            }
        }
        real_trajs.push(Trajectory { rewards, exit_step });

        // Model branch from the same start state.
        let mut s = s0.clone();
        let mut rewards = Vec::with_capacity(t_max);
        let mut exit_step = t_max + 1;
        for t in 0..t_max {
            let a = policy.sample_action(&s, &mut rng)?;
            let r = macura_core::env::reward([s[0], s[1]], T::of(torque_scale) * a[0]);
            rewards.push(r.as_f64());
            let member = rng.gen_range(0..model.num_members());
            let pred = model.member_predict(member, &s, &a)?;
            s = pred.sample(&mut rng);
            visited_model_states.push(s.clone());
            if exit_step > t_max && !membership(model, policy, &s, kappa, &mut rng)? {
                exit_step = t + 1;
                break;
            }
        }
        model_trajs.push(Trajectory { rewards, exit_step });
    }

    // Shift rewards strictly positive; r_max is the shifted maximum.
    let all_rewards = real_trajs
        .iter()
        .chain(&model_trajs)
        .flat_map(|t| t.rewards.iter().copied());
    let r_min = all_rewards.clone().fold(f64::INFINITY, f64::min);
    let r_max_raw = all_rewards.fold(f64::NEG_INFINITY, f64::max);
    let epsilon = 1e-6;
    let shift = epsilon - r_min;
    let r_max = r_max_raw + shift;

    // Worst-case misalignment over the trusted set.
    let delta_p_sup = match delta_p {
        DeltaPEstimate::Grid(spec) => {
            let study = grid_study(model, controller_for_grid, pendulum, &spec, kappa)?;
            study
                .d_tv
                .iter()
                .zip(&study.in_e)
                .filter(|(_, &m)| m)
                .map(|(d, _)| *d)
                .fold(0.0, f64::max)
        }
        DeltaPEstimate::Visitation => {
            let mut sup = 0.0f64;
            for s in &visited_model_states {
                let a = policy.sample_action(s, &mut rng)?;
                let pred = model.predict(s, &a)?;
                if u_gjs(&pred).as_f64() >= kappa {
                    continue;
                }
                let mean =
                    pendulum_mean_step(pendulum, [s[0], s[1]], T::of(torque_scale) * a[0])?;
                let truth = DiagGaussian::new(mean.to_vec(), noise.to_vec())?;
                let mut acc = 0.0;
                for member in pred.members() {
                    acc += tv_upper_bound(&truth, member)?.as_f64();
                }
                sup = sup.max(acc / model.num_members() as f64);
            }
            sup
        }
    };

    // Truncated discounted returns and per-rollout bound values.
    let discounted = |rewards: &[f64], upto: usize| -> f64 {
        rewards
            .iter()
            .take(upto + 1)
            .enumerate()
            .map(|(t, r)| gamma.powi(t as i32) * (r + shift))
            .sum()
    };
    let c_of = |t_stop: usize| -> f64 {
        (0..=t_stop)
            .map(|t| gamma.powi(t as i32) * (t + 1) as f64 * delta_p_sup)
            .sum::<f64>()
            * 2.0
            * r_max
    };

    let mut eta_hat_samples = Vec::with_capacity(n_rollouts);
    let mut eta_tilde_samples = Vec::with_capacity(n_rollouts);
    let mut eta_tilde_approx_samples = Vec::with_capacity(n_rollouts);
    let mut c_samples = Vec::with_capacity(n_rollouts);
    let mut c_approx_samples = Vec::with_capacity(n_rollouts);
    let mut stop_sum = 0.0;
    for (real, modeled) in real_trajs.iter().zip(&model_trajs) {
        // T(omega) = min(T_real, T_model) - 1, capped at the horizon.
        let t_coupled = (real.exit_step.min(modeled.exit_step) - 1).min(t_max - 1);
        let t_approx = (modeled.exit_step - 1).min(t_max - 1);
        stop_sum += t_coupled as f64;
        eta_hat_samples.push(discounted(&real.rewards, t_coupled));
        eta_tilde_samples.push(discounted(&modeled.rewards, t_coupled));
        eta_tilde_approx_samples.push(discounted(&modeled.rewards, t_approx));
        c_samples.push(c_of(t_coupled));
        c_approx_samples.push(c_of(t_approx));
    }

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let var = |xs: &[f64]| {
        let m = mean(xs);
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
    };
    let eta_hat = mean(&eta_hat_samples);
    let eta_tilde = mean(&eta_tilde_samples);
    let eta_tilde_approx = mean(&eta_tilde_approx_samples);
    let c_bound = mean(&c_samples);
    let c_bound_approx = mean(&c_approx_samples);
    let n = n_rollouts as f64;
    let se_margin =
        3.0 * ((var(&eta_hat_samples) + var(&eta_tilde_samples)) / n).sqrt();

    Ok(BoundReport {
        eta_hat,
        eta_tilde,
        eta_tilde_approx,
        delta_p_sup,
        c_bound,
        c_bound_approx,
        holds: (eta_hat - eta_tilde).abs() <= c_bound + se_margin,
        holds_approx: (eta_hat - eta_tilde_approx).abs() <= c_bound_approx + se_margin,
        reward_shift: shift,
        r_max,
        se_margin,
        n_rollouts,
        mean_stopping_time: stop_sum / n,
    })
}

impl BoundReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "eta_hat,eta_tilde,eta_tilde_approx,delta_p_sup,c_bound,c_bound_approx,holds,holds_approx,reward_shift,r_max,se_margin,n_rollouts,mean_stopping_time\n",
        );
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            self.eta_hat,
            self.eta_tilde,
            self.eta_tilde_approx,
            self.delta_p_sup,
            self.c_bound,
            self.c_bound_approx,
            self.holds as u8,
            self.holds_approx as u8,
            self.reward_shift,
            self.r_max,
            self.se_margin,
            self.n_rollouts,
            self.mean_stopping_time
        ));
        out
    }
}

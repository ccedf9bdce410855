//! Soft actor-critic: squashed-Gaussian policy, twin critics with Polyak
//! target networks, and optional entropy-temperature auto-tuning.
//!
//! Gradients are hand-derived reverse-mode chains through the
//! reparameterized action a = tanh(mu + sigma * eps); the finite-difference
//! suites pin them down.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{polyak_update, softplus, Activation, Adam, Linear, LinearGrad, Mlp, MlpGrads};
use crate::scalar::{all_finite, Scalar};

const LN_2PI: f64 = 1.8378770664093453;
const LOGSTD_MIN: f64 = -20.0;
const LOGSTD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone)]
pub struct SacConfig {
    pub discount: f64,
    /// Polyak smoothing factor for the target critics.
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub batch_size: usize,
    pub target_entropy: f64,
    /// Fraction of each training batch drawn from the environment buffer.
    pub env_data_fraction: f64,
    pub auto_entropy_tuning: bool,
    /// Used verbatim when auto tuning is off.
    pub fixed_temperature: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            temperature_lr: 3e-4,
            batch_size: 128,
            target_entropy: -1.0,
            env_data_fraction: 0.05,
            auto_entropy_tuning: true,
            fixed_temperature: 0.2,
            hidden_layers: 2,
            hidden_width: 128,
            activation: Activation::Relu,
        }
    }
}

/// Actor network: shared trunk plus mean and log-std heads.
#[derive(Debug, Clone)]
pub struct ActorNet<T> {
    pub trunk: Mlp<T>,
    pub mean_head: Linear<T>,
    pub logstd_head: Linear<T>,
}

/// The full SAC learner state. Optimizer moments live here too so that a
/// training loop only ever threads one value around.
#[derive(Debug, Clone)]
pub struct AgentParams<T> {
    pub actor: ActorNet<T>,
    pub critic1: Mlp<T>,
    pub critic2: Mlp<T>,
    pub target1: Mlp<T>,
    pub target2: Mlp<T>,
    pub log_temperature: T,
    pub target_entropy: T,
    pub auto_entropy_tuning: bool,
    state_dim: usize,
    action_dim: usize,
    opt_actor: Adam<T>,
    opt_critic1: Adam<T>,
    opt_critic2: Adam<T>,
    opt_temperature: Adam<T>,
}

/// A training batch; `terminal` marks absorbing states (not timeouts).
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub states: Array2<T>,
    pub actions: Array2<T>,
    pub rewards: Array1<T>,
    pub next_states: Array2<T>,
    pub terminal: Vec<bool>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct UpdateReport<T> {
    pub critic1_loss: T,
    pub critic2_loss: T,
    pub actor_loss: T,
    pub temperature_loss: T,
    pub temperature: T,
    /// -mean log pi of the fresh actor samples.
    pub entropy_estimate: T,
}

impl<T: Scalar> AgentParams<T> {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        cfg: &SacConfig,
        rng: &mut R,
    ) -> Self {
        let mut trunk_dims = vec![state_dim];
        trunk_dims.extend(std::iter::repeat_n(cfg.hidden_width, cfg.hidden_layers));
        let trunk = Mlp::new(&trunk_dims, cfg.activation, rng);
        let mean_head = Linear::new(cfg.hidden_width, action_dim, rng);
        let logstd_head = Linear::new(cfg.hidden_width, action_dim, rng);

        let mut critic_dims = vec![state_dim + action_dim];
        critic_dims.extend(std::iter::repeat_n(cfg.hidden_width, cfg.hidden_layers));
        critic_dims.push(1);
        let critic1 = Mlp::new(&critic_dims, cfg.activation, rng);
        let critic2 = Mlp::new(&critic_dims, cfg.activation, rng);
        let target1 = critic1.clone();
        let target2 = critic2.clone();

        let log_temperature = if cfg.auto_entropy_tuning {
            T::zero()
        } else {
            T::of(cfg.fixed_temperature.ln())
        };

        Self {
            actor: ActorNet {
                trunk,
                mean_head,
                logstd_head,
            },
            critic1,
            critic2,
            target1,
            target2,
            log_temperature,
            target_entropy: T::of(cfg.target_entropy),
            auto_entropy_tuning: cfg.auto_entropy_tuning,
            state_dim,
            action_dim,
            opt_actor: Adam::new(T::of(cfg.actor_lr)),
            opt_critic1: Adam::new(T::of(cfg.critic_lr)),
            opt_critic2: Adam::new(T::of(cfg.critic_lr)),
            opt_temperature: Adam::new(T::of(cfg.temperature_lr)),
        }
    }

    /// Rebuilds an agent from restored parameters (checkpoint loading);
    /// optimizer moments start fresh with the learning rates from `cfg`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        actor: ActorNet<T>,
        critic1: Mlp<T>,
        critic2: Mlp<T>,
        target1: Mlp<T>,
        target2: Mlp<T>,
        log_temperature: T,
        target_entropy: T,
        auto_entropy_tuning: bool,
        cfg: &SacConfig,
    ) -> Self {
        let state_dim = actor.trunk.d_in();
        let action_dim = actor.mean_head.d_out();
        Self {
            actor,
            critic1,
            critic2,
            target1,
            target2,
            log_temperature,
            target_entropy,
            auto_entropy_tuning,
            state_dim,
            action_dim,
            opt_actor: Adam::new(T::of(cfg.actor_lr)),
            opt_critic1: Adam::new(T::of(cfg.critic_lr)),
            opt_critic2: Adam::new(T::of(cfg.critic_lr)),
            opt_temperature: Adam::new(T::of(cfg.temperature_lr)),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// (mean, clamped log-std) rows for a batch of states.
    pub fn actor_heads(&self, states: &Array2<T>) -> (Array2<T>, Array2<T>) {
        let h = self.actor.trunk.forward(states);
        let mean = self.actor.mean_head.forward(&h);
        let logstd = self
            .actor
            .logstd_head
            .forward(&h)
            .mapv(|x| x.max(T::of(LOGSTD_MIN)).min(T::of(LOGSTD_MAX)));
        (mean, logstd)
    }
}

/// Current entropy temperature alpha = exp(log_temperature).
pub fn entropy_temperature<T: Scalar>(params: &AgentParams<T>) -> T {
    params.log_temperature.exp()
}

/// Samples (stochastic) or returns tanh(mean) (deterministic). Actions are
/// componentwise in (-1, 1).
pub fn act<T: Scalar, R: Rng + ?Sized>(
    params: &AgentParams<T>,
    state: &[T],
    mode: ActMode,
    rng: &mut R,
) -> Result<Vec<T>> {
    match mode {
        ActMode::Deterministic => {
            let eps = vec![T::zero(); params.action_dim];
            act_with_epsilon(params, state, &eps)
        }
        ActMode::Stochastic => {
            let eps: Vec<T> = (0..params.action_dim)
                .map(|_| T::standard_normal(rng))
                .collect();
            act_with_epsilon(params, state, &eps)
        }
    }
}

/// a = tanh(mu + sigma * eps) for a caller-supplied noise vector; this is
/// the injection point for correlated exploration noise.
pub fn act_with_epsilon<T: Scalar>(
    params: &AgentParams<T>,
    state: &[T],
    eps: &[T],
) -> Result<Vec<T>> {
    if !all_finite(state) {
        return Err(Error::NonFinite { context: "act input state" });
    }
    if state.len() != params.state_dim {
        return Err(Error::DimensionMismatch {
            expected: params.state_dim,
            got: state.len(),
        });
    }
    if eps.len() != params.action_dim {
        return Err(Error::DimensionMismatch {
            expected: params.action_dim,
            got: eps.len(),
        });
    }
    let x = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("row shape");
    let (mean, logstd) = params.actor_heads(&x);
    let action: Vec<T> = (0..params.action_dim)
        .map(|i| (mean[[0, i]] + logstd[[0, i]].exp() * eps[i]).tanh())
        .collect();
    if !all_finite(&action) {
        return Err(Error::NonFinite { context: "actor output" });
    }
    Ok(action)
}

/// log pi(a|s) for a = tanh(u), u = mu + sigma*eps, summed over action dims.
/// The tanh Jacobian uses the stable identity
/// log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u)).
pub fn squashed_log_prob<T: Scalar>(u: &Array2<T>, logstd: &Array2<T>, eps: &Array2<T>) -> Array1<T> {
    let half = T::of(0.5);
    let ln2 = T::of(std::f64::consts::LN_2);
    let ln2pi = T::of(LN_2PI);
    let b = u.nrows();
    let mut out = Array1::from_elem(b, T::zero());
    for i in 0..b {
        let mut acc = T::zero();
        for j in 0..u.ncols() {
            let e = eps[[i, j]];
            let uu = u[[i, j]];
            acc += -half * ln2pi - logstd[[i, j]] - half * e * e
                - T::of(2.0) * (ln2 - uu - softplus(-(uu + uu)));
        }
        out[i] = acc;
    }
    out
}

fn concat_cols<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts match")
}

/// MSE regression loss of one critic against fixed targets, with parameter
/// gradients. Pure; `update` applies the optimizer step.
pub fn critic_loss_and_grads<T: Scalar>(
    critic: &Mlp<T>,
    inputs: &Array2<T>,
    targets: &Array1<T>,
) -> (T, MlpGrads<T>) {
    let b = targets.len();
    let inv_b = T::one() / T::of(b as f64);
    let (q, cache) = critic.forward_cached(inputs);
    let mut loss = T::zero();
    let mut d_out = Array2::from_elem((b, 1), T::zero());
    for i in 0..b {
        let diff = q[[i, 0]] - targets[i];
        loss += diff * diff * inv_b;
        d_out[[i, 0]] = T::of(2.0) * diff * inv_b;
    }
    let mut grads = MlpGrads::zeros_like(critic);
    critic.backward(&cache, &d_out, &mut grads);
    (loss, grads)
}

/// Gradients of the reparameterized actor objective
/// J = mean(alpha * log pi(a|s) - min_i Q_i(s, a)), a = tanh(mu + sigma*eps),
/// at a fixed noise matrix `eps`. Pure; `update` applies the optimizer step.
pub struct ActorGradients<T> {
    pub loss: T,
    pub trunk: MlpGrads<T>,
    pub mean_head: LinearGrad<T>,
    pub logstd_head: LinearGrad<T>,
    pub log_probs: Array1<T>,
}

pub fn actor_loss_and_grads<T: Scalar>(
    params: &AgentParams<T>,
    states: &Array2<T>,
    eps: &Array2<T>,
) -> Result<ActorGradients<T>> {
    let b = states.nrows();
    let da = params.action_dim;
    let inv_b = T::one() / T::of(b as f64);
    let alpha = entropy_temperature(params);
    let ds = params.state_dim;

    let (h, trunk_cache) = params.actor.trunk.forward_cached(states);
    let mean = params.actor.mean_head.forward(&h);
    let logstd_raw = params.actor.logstd_head.forward(&h);
    let logstd = logstd_raw.mapv(|v| v.max(T::of(LOGSTD_MIN)).min(T::of(LOGSTD_MAX)));
    let std = logstd.mapv(|v| v.exp());
    let u = &mean + &(&std * eps);
    let a_pi = u.mapv(|v| v.tanh());
    let log_probs = squashed_log_prob(&u, &logstd, eps);

    let x_pi = concat_cols(states, &a_pi);
    let (q1p, c1p) = params.critic1.forward_cached(&x_pi);
    let (q2p, c2p) = params.critic2.forward_cached(&x_pi);

    let mut loss = T::zero();
    let mut d_q1 = Array2::from_elem((b, 1), T::zero());
    let mut d_q2 = Array2::from_elem((b, 1), T::zero());
    for i in 0..b {
        let (qmin, use_first) = if q1p[[i, 0]] <= q2p[[i, 0]] {
            (q1p[[i, 0]], true)
        } else {
            (q2p[[i, 0]], false)
        };
        loss += (alpha * log_probs[i] - qmin) * inv_b;
        if use_first {
            d_q1[[i, 0]] = -inv_b;
        } else {
            d_q2[[i, 0]] = -inv_b;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { context: "actor loss" });
    }

    // Input gradients of the critics; their parameters are not touched here.
    let dx1 = params.critic1.backward_input(&c1p, &d_q1);
    let dx2 = params.critic2.backward_input(&c2p, &d_q2);

    let mut d_mean = Array2::from_elem((b, da), T::zero());
    let mut d_logstd_raw = Array2::from_elem((b, da), T::zero());
    let two = T::of(2.0);
    for i in 0..b {
        for j in 0..da {
            let t = a_pi[[i, j]];
            let d_a = dx1[[i, ds + j]] + dx2[[i, ds + j]];
            // d/du of [alpha/B * log pi - qmin/B]: the tanh Jacobian term of
            // log pi contributes 2 tanh(u); the critic path contributes
            // dQ/da * (1 - tanh^2 u).
            let d_u = alpha * inv_b * two * t + d_a * (T::one() - t * t);
            d_mean[[i, j]] = d_u;
            let raw = logstd_raw[[i, j]];
            // Zero gradient outside the clamp range.
            if raw > T::of(LOGSTD_MIN) && raw < T::of(LOGSTD_MAX) {
                // Direct -1 from -log sigma, plus the u-path via du/dlogstd = sigma*eps.
                d_logstd_raw[[i, j]] = -alpha * inv_b + d_u * std[[i, j]] * eps[[i, j]];
            }
        }
    }

    let mut mean_head = LinearGrad::zeros_like(&params.actor.mean_head);
    let mut logstd_head = LinearGrad::zeros_like(&params.actor.logstd_head);
    let dh_mean = params.actor.mean_head.backward(&h, &d_mean, &mut mean_head);
    let dh_logstd = params
        .actor
        .logstd_head
        .backward(&h, &d_logstd_raw, &mut logstd_head);
    let dh = &dh_mean + &dh_logstd;
    let mut trunk = MlpGrads::zeros_like(&params.actor.trunk);
    params.actor.trunk.backward(&trunk_cache, &dh, &mut trunk);

    Ok(ActorGradients {
        loss,
        trunk,
        mean_head,
        logstd_head,
        log_probs,
    })
}

/// One SAC update: a gradient step each for the critics, the actor, and the
/// entropy temperature, then a Polyak update of the target critics.
///
/// Critic target: y = r + (1 - terminal) * (gamma * min Q_target(s', a') - alpha * log pi(a'|s'))
/// with a' freshly sampled from the current policy.
pub fn update<T: Scalar, R: Rng + ?Sized>(
    params: &mut AgentParams<T>,
    batch: &Batch<T>,
    cfg: &SacConfig,
    rng: &mut R,
) -> Result<UpdateReport<T>> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::EmptyBuffer);
    }
    let da = params.action_dim;
    let inv_b = T::one() / T::of(b as f64);
    let alpha = entropy_temperature(params);
    let gamma = T::of(cfg.discount);

    // --- Critic target (no gradients flow through any of this).
    let eps_next = Array2::from_shape_fn((b, da), |_| T::standard_normal(rng));
    let (mean2, logstd2) = params.actor_heads(&batch.next_states);
    let u2 = &mean2 + &(logstd2.mapv(|x| x.exp()) * &eps_next);
    let a2 = u2.mapv(|x| x.tanh());
    let logp2 = squashed_log_prob(&u2, &logstd2, &eps_next);

    let x2 = concat_cols(&batch.next_states, &a2);
    let qt1 = params.target1.forward(&x2);
    let qt2 = params.target2.forward(&x2);
    let mut y = Array1::from_elem(b, T::zero());
    for i in 0..b {
        let qmin = qt1[[i, 0]].min(qt2[[i, 0]]);
        let mask = if batch.terminal[i] { T::zero() } else { T::one() };
        y[i] = batch.rewards[i] + mask * (gamma * qmin - alpha * logp2[i]);
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "critic target" });
    }

    // --- Twin critic regression onto y.
    let x = concat_cols(&batch.states, &batch.actions);
    let mut critic_losses = [T::zero(); 2];
    for (k, (critic, opt)) in [
        (&mut params.critic1, &mut params.opt_critic1),
        (&mut params.critic2, &mut params.opt_critic2),
    ]
    .into_iter()
    .enumerate()
    {
        let (loss, grads) = critic_loss_and_grads(critic, &x, &y);
        if !loss.is_finite() {
            return Err(Error::NonFinite { context: "critic loss" });
        }
        let mut p = critic.param_slices_mut();
        opt.step(&mut p, &grads.slices());
        critic_losses[k] = loss;
    }

    // --- Actor: J = mean(alpha * log pi(a|s) - min Q(s, a)), a reparameterized.
    let eps = Array2::from_shape_fn((b, da), |_| T::standard_normal(rng));
    let actor = actor_loss_and_grads(params, &batch.states, &eps)?;
    {
        let mut p = params.actor.trunk.param_slices_mut();
        p.push(params.actor.mean_head.w.as_slice_mut().expect("layout"));
        p.push(params.actor.mean_head.b.as_slice_mut().expect("layout"));
        p.push(params.actor.logstd_head.w.as_slice_mut().expect("layout"));
        p.push(params.actor.logstd_head.b.as_slice_mut().expect("layout"));
        let mut g = actor.trunk.slices();
        g.push(actor.mean_head.w.as_slice().expect("layout"));
        g.push(actor.mean_head.b.as_slice().expect("layout"));
        g.push(actor.logstd_head.w.as_slice().expect("layout"));
        g.push(actor.logstd_head.b.as_slice().expect("layout"));
        params.opt_actor.step(&mut p, &g);
    }
    let actor_loss = actor.loss;

    // --- Temperature: J(alpha) = -alpha * mean(log pi + target_entropy).
    let mean_logp = actor.log_probs.iter().fold(T::zero(), |s, &v| s + v) * inv_b;
    let temperature_loss = -alpha * (mean_logp + params.target_entropy);
    if params.auto_entropy_tuning {
        let g = -alpha * (mean_logp + params.target_entropy);
        let mut slot = [params.log_temperature];
        params.opt_temperature.step(&mut [&mut slot], &[&[g]]);
        params.log_temperature = slot[0];
    }

    let tau = T::of(cfg.tau);
    polyak_update(&mut params.target1, &params.critic1, tau);
    polyak_update(&mut params.target2, &params.critic2, tau);

    Ok(UpdateReport {
        critic1_loss: critic_losses[0],
        critic2_loss: critic_losses[1],
        actor_loss,
        temperature_loss,
        temperature: entropy_temperature(params),
        entropy_estimate: -mean_logp,
    })
}

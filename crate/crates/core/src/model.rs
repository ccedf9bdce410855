//! Probabilistic-ensemble dynamics model: E Gaussian-head MLPs trained by
//! negative log-likelihood on bootstrapped data, with shared input/target
//! normalization and softly bounded predicted log-variances.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::buffer::ReplayBuffer;
use crate::error::{Error, Result};
use crate::gaussian::{DiagGaussian, EnsemblePrediction};
use crate::nn::{sigmoid, softplus, Activation, Adam, Mlp, MlpGrads};
use crate::scalar::{all_finite, Scalar};

const LN_2PI: f64 = 1.8378770664093453;

/// Architecture of one ensemble.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub ensemble_size: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    /// Regress s' - s instead of s'.
    pub predict_delta: bool,
    pub logvar_min_init: f64,
    pub logvar_max_init: f64,
}

impl ModelConfig {
    pub fn new(state_dim: usize, action_dim: usize, ensemble_size: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            ensemble_size,
            hidden_layers: 4,
            hidden_width: 64,
            activation: Activation::Silu,
            predict_delta: true,
            logvar_min_init: -10.0,
            logvar_max_init: 0.5,
        }
    }
}

/// Training-loop settings for [`train_ensemble`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without holdout improvement before stopping.
    pub patience: usize,
    pub holdout_fraction: f64,
    pub min_train_size: usize,
    pub weight_decay: f64,
    /// Coefficient on sum(logvar_max - logvar_min), keeps the bounds tight.
    pub bound_reg: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 50,
            patience: 5,
            holdout_fraction: 0.1,
            min_train_size: 64,
            weight_decay: 5e-5,
            bound_reg: 0.01,
        }
    }
}

/// Per-dimension affine normalization for inputs (s, a) and regression targets.
#[derive(Debug, Clone)]
pub struct Normalizer<T> {
    pub input_mean: Vec<T>,
    pub input_std: Vec<T>,
    pub target_mean: Vec<T>,
    pub target_std: Vec<T>,
    pub fitted: bool,
}

const STD_FLOOR: f64 = 1e-8;

impl<T: Scalar> Normalizer<T> {
    pub fn identity(input_dim: usize, target_dim: usize) -> Self {
        Self {
            input_mean: vec![T::zero(); input_dim],
            input_std: vec![T::one(); input_dim],
            target_mean: vec![T::zero(); target_dim],
            target_std: vec![T::one(); target_dim],
            fitted: true,
        }
    }

    pub fn unfitted(input_dim: usize, target_dim: usize) -> Self {
        let mut n = Self::identity(input_dim, target_dim);
        n.fitted = false;
        n
    }

    pub fn fit(&mut self, inputs: &Array2<T>, targets: &Array2<T>) {
        let (im, is) = column_stats(inputs);
        let (tm, ts) = column_stats(targets);
        self.input_mean = im;
        self.input_std = is;
        self.target_mean = tm;
        self.target_std = ts;
        self.fitted = true;
    }

    pub fn normalize_input(&self, raw: &[T]) -> Vec<T> {
        raw.iter()
            .zip(self.input_mean.iter().zip(&self.input_std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }

    pub fn normalize_input_rows(&self, rows: &Array2<T>) -> Array2<T> {
        let mut out = rows.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let m = self.input_mean[j];
            let s = self.input_std[j];
            col.mapv_inplace(|x| (x - m) / s);
        }
        out
    }

    pub fn normalize_target_rows(&self, rows: &Array2<T>) -> Array2<T> {
        let mut out = rows.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let m = self.target_mean[j];
            let s = self.target_std[j];
            col.mapv_inplace(|x| (x - m) / s);
        }
        out
    }

    pub fn denormalize_target(&self, normalized: &[T]) -> Vec<T> {
        normalized
            .iter()
            .zip(self.target_mean.iter().zip(&self.target_std))
            .map(|(&x, (&m, &s))| m + s * x)
            .collect()
    }
}

fn column_stats<T: Scalar>(rows: &Array2<T>) -> (Vec<T>, Vec<T>) {
    let n = T::of(rows.nrows().max(1) as f64);
    let mut means = Vec::with_capacity(rows.ncols());
    let mut stds = Vec::with_capacity(rows.ncols());
    for col in rows.axis_iter(Axis(1)) {
        let mean = col.iter().fold(T::zero(), |s, &x| s + x) / n;
        let var = col.iter().fold(T::zero(), |s, &x| s + (x - mean) * (x - mean)) / n;
        means.push(mean);
        stds.push(var.sqrt().max(T::of(STD_FLOOR)));
    }
    (means, stds)
}

/// One probabilistic network: an MLP emitting (mean, raw log-variance) in
/// normalized target coordinates, with trainable soft bounds on the
/// log-variance.
#[derive(Debug, Clone)]
pub struct PnnParams<T> {
    pub net: Mlp<T>,
    pub logvar_min: Array1<T>,
    pub logvar_max: Array1<T>,
}

impl<T: Scalar> PnnParams<T> {
    fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut dims = vec![cfg.state_dim + cfg.action_dim];
        dims.extend(std::iter::repeat_n(cfg.hidden_width, cfg.hidden_layers));
        dims.push(2 * cfg.state_dim);
        Self {
            net: Mlp::new(&dims, cfg.activation, rng),
            logvar_min: Array1::from_elem(cfg.state_dim, T::of(cfg.logvar_min_init)),
            logvar_max: Array1::from_elem(cfg.state_dim, T::of(cfg.logvar_max_init)),
        }
    }

    /// Soft double-sided bound keeping the log-variance inside
    /// (logvar_min, logvar_max).
    pub fn bound_logvar(&self, dim: usize, raw: T) -> T {
        let hi = self.logvar_max[dim];
        let lo = self.logvar_min[dim];
        let v = hi - softplus(hi - raw);
        lo + softplus(v - lo)
    }
}

/// Probabilistic ensemble: E PNNs sharing one normalizer and architecture.
#[derive(Debug, Clone)]
pub struct EnsembleModel<T> {
    pub members: Vec<PnnParams<T>>,
    pub normalizer: Normalizer<T>,
    pub config: ModelConfig,
}

/// Outcome of one [`train_ensemble`] call.
#[derive(Debug, Clone)]
pub struct TrainReport<T> {
    pub epochs_run: usize,
    pub holdout_nll_per_member: Vec<T>,
    pub improved: bool,
}

impl<T: Scalar> TrainReport<T> {
    pub fn mean_holdout_nll(&self) -> T {
        let n = T::of(self.holdout_nll_per_member.len() as f64);
        self.holdout_nll_per_member
            .iter()
            .fold(T::zero(), |s, &x| s + x)
            / n
    }
}

impl<T: Scalar> EnsembleModel<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Self {
        assert!(config.ensemble_size >= 2, "ensemble needs at least 2 members");
        let members = (0..config.ensemble_size)
            .map(|_| PnnParams::new(&config, rng))
            .collect();
        Self {
            members,
            normalizer: Normalizer::unfitted(
                config.state_dim + config.action_dim,
                config.state_dim,
            ),
            config,
        }
    }

    pub fn ensemble_size(&self) -> usize {
        self.members.len()
    }

    pub fn member_forward(&self, e: usize, s: &[T], a: &[T]) -> Result<DiagGaussian<T>> {
        let member = self.members.get(e).ok_or(Error::MemberIndex {
            index: e,
            len: self.members.len(),
        })?;
        pnn_forward(member, &self.normalizer, self.config.predict_delta, s, a)
    }
}

/// Next-state distribution of one member in raw state coordinates.
pub fn pnn_forward<T: Scalar>(
    member: &PnnParams<T>,
    normalizer: &Normalizer<T>,
    predict_delta: bool,
    s: &[T],
    a: &[T],
) -> Result<DiagGaussian<T>> {
    if !normalizer.fitted {
        return Err(Error::UntrainedModel);
    }
    if !all_finite(s) || !all_finite(a) {
        return Err(Error::NonFinite { context: "pnn_forward input" });
    }
    let d = member.logvar_min.len();
    if s.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: s.len() });
    }
    let mut raw_in: Vec<T> = Vec::with_capacity(s.len() + a.len());
    raw_in.extend_from_slice(s);
    raw_in.extend_from_slice(a);
    if raw_in.len() != normalizer.input_mean.len() {
        return Err(Error::DimensionMismatch {
            expected: normalizer.input_mean.len(),
            got: raw_in.len(),
        });
    }
    let x = Array2::from_shape_vec((1, raw_in.len()), normalizer.normalize_input(&raw_in))
        .expect("row shape");
    let out = member.net.forward(&x);

    let mut mean = Vec::with_capacity(d);
    let mut var = Vec::with_capacity(d);
    for i in 0..d {
        let mu_n = out[[0, i]];
        let lv = member.bound_logvar(i, out[[0, d + i]]);
        let ts = normalizer.target_std[i];
        let mut m = normalizer.target_mean[i] + ts * mu_n;
        if predict_delta {
            m += s[i];
        }
        mean.push(m);
        var.push(ts * ts * lv.exp());
    }
    DiagGaussian::new(mean, var)
}

/// Gaussian negative log-likelihood of `target` under `pred`, summed over
/// dimensions: 1/2 * sum_i [ (t_i - mu_i)^2 / v_i + ln v_i + ln 2 pi ].
pub fn nll_loss<T: Scalar>(pred: &DiagGaussian<T>, target: &[T]) -> Result<T> {
    if target.len() != pred.dim() {
        return Err(Error::DimensionMismatch {
            expected: pred.dim(),
            got: target.len(),
        });
    }
    let half = T::of(0.5);
    let ln2pi = T::of(LN_2PI);
    let mut acc = T::zero();
    for ((&t, &m), &v) in target.iter().zip(pred.mean()).zip(pred.var()) {
        let d = t - m;
        acc += d * d / v + v.ln() + ln2pi;
    }
    Ok(half * acc)
}

/// All E member predictions at (s, a), member order fixed.
pub fn predict_ensemble<T: Scalar>(
    model: &EnsembleModel<T>,
    s: &[T],
    a: &[T],
) -> Result<EnsemblePrediction<T>> {
    let members = (0..model.ensemble_size())
        .map(|e| model.member_forward(e, s, a))
        .collect::<Result<Vec<_>>>()?;
    EnsemblePrediction::new(members)
}

/// Draws the next state from member `member_index`'s predicted Gaussian.
pub fn sample_next<T: Scalar, R: Rng + ?Sized>(
    model: &EnsembleModel<T>,
    member_index: usize,
    s: &[T],
    a: &[T],
    rng: &mut R,
) -> Result<Vec<T>> {
    Ok(model.member_forward(member_index, s, a)?.sample(rng))
}

/// Anything that exposes per-member Gaussian next-state predictions. The
/// rollout schedulers and diagnostics run against this trait so scripted
/// and exact models can stand in for a learned ensemble.
pub trait DynamicsEnsemble<T: Scalar> {
    fn num_members(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn member_predict(&self, e: usize, s: &[T], a: &[T]) -> Result<DiagGaussian<T>>;

    fn predict(&self, s: &[T], a: &[T]) -> Result<EnsemblePrediction<T>> {
        let members = (0..self.num_members())
            .map(|e| self.member_predict(e, s, a))
            .collect::<Result<Vec<_>>>()?;
        EnsemblePrediction::new(members)
    }
}

impl<T: Scalar> DynamicsEnsemble<T> for EnsembleModel<T> {
    fn num_members(&self) -> usize {
        self.ensemble_size()
    }

    fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    fn member_predict(&self, e: usize, s: &[T], a: &[T]) -> Result<DiagGaussian<T>> {
        self.member_forward(e, s, a)
    }

    fn predict(&self, s: &[T], a: &[T]) -> Result<EnsemblePrediction<T>> {
        predict_ensemble(self, s, a)
    }
}

struct MemberTrainer<T> {
    opt: Adam<T>,
    bootstrap: Vec<usize>,
    rng: ChaCha8Rng,
    best_nll: T,
    best_params: PnnParams<T>,
}

/// Trains every member on its own bootstrap resample of the training split,
/// scoring a shared holdout after each epoch. Stops at `max_epochs` or after
/// `patience` consecutive epochs without improvement of the mean holdout NLL.
/// Members end at their individually best holdout parameters.
pub fn train_ensemble<T: Scalar, R: Rng + ?Sized>(
    model: &mut EnsembleModel<T>,
    data: &ReplayBuffer<T>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport<T>> {
    let n = data.len();
    if n < cfg.min_train_size.max(2) {
        return Err(Error::InsufficientData {
            needed: cfg.min_train_size.max(2),
            got: n,
        });
    }
    let ds = model.config.state_dim;
    let da = model.config.action_dim;

    // Raw design matrices; targets are deltas when predict_delta is set.
    let mut inputs = Array2::from_elem((n, ds + da), T::zero());
    let mut targets = Array2::from_elem((n, ds), T::zero());
    let mut next_states = Array2::from_elem((n, ds), T::zero());
    for (i, tr) in data.iter().enumerate() {
        for j in 0..ds {
            inputs[[i, j]] = tr.state[j];
            next_states[[i, j]] = tr.next_state[j];
            targets[[i, j]] = if model.config.predict_delta {
                tr.next_state[j] - tr.state[j]
            } else {
                tr.next_state[j]
            };
        }
        for j in 0..da {
            inputs[[i, ds + j]] = tr.action[j];
        }
    }

    // Shared holdout; the bootstrap applies to the training split only.
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, rng);
    let mut n_holdout = ((n as f64) * cfg.holdout_fraction).round() as usize;
    n_holdout = n_holdout.clamp(1, n - 1);
    let holdout_idx = &order[..n_holdout];
    let train_idx = &order[n_holdout..];

    let train_inputs = select_rows(&inputs, train_idx);
    let train_targets = select_rows(&targets, train_idx);
    model.normalizer.fit(&train_inputs, &train_targets);

    let holdout_in = model.normalizer.normalize_input_rows(&select_rows(&inputs, holdout_idx));
    let holdout_next = select_rows(&next_states, holdout_idx);
    let holdout_states: Array2<T> = {
        let full = select_rows(&inputs, holdout_idx);
        full.slice(ndarray::s![.., ..ds]).to_owned()
    };

    let norm_inputs = model.normalizer.normalize_input_rows(&train_inputs);
    let norm_targets = model.normalizer.normalize_target_rows(&train_targets);

    let mut trainers: Vec<MemberTrainer<T>> = Vec::with_capacity(model.members.len());
    for member in &model.members {
        let seed = rng.gen::<u64>();
        let mut member_rng = ChaCha8Rng::seed_from_u64(seed);
        let bootstrap: Vec<usize> = (0..train_idx.len())
            .map(|_| member_rng.gen_range(0..train_idx.len()))
            .collect();
        trainers.push(MemberTrainer {
            opt: Adam::new(T::of(cfg.learning_rate)),
            bootstrap,
            rng: member_rng,
            best_nll: T::infinity(),
            best_params: member.clone(),
        });
    }

    let eval_member = |member: &PnnParams<T>, normalizer: &Normalizer<T>| -> T {
        holdout_nll(
            member,
            normalizer,
            model.config.predict_delta,
            &holdout_in,
            &holdout_states,
            &holdout_next,
        )
    };

    // Baseline before any gradient step; snapshots start at the current params.
    let mut init_nll = Vec::with_capacity(model.members.len());
    for (e, member) in model.members.iter().enumerate() {
        let nll = eval_member(member, &model.normalizer);
        trainers[e].best_nll = nll;
        init_nll.push(nll);
    }
    let init_mean = mean(&init_nll);
    let mut best_mean = init_mean;

    let mut epochs_run = 0;
    let mut since_improve = 0usize;
    for _epoch in 0..cfg.max_epochs {
        for (e, member) in model.members.iter_mut().enumerate() {
            let tr = &mut trainers[e];
            shuffle(&mut tr.bootstrap, &mut tr.rng);
            for chunk in tr.bootstrap.chunks(cfg.batch_size) {
                let x = select_rows(&norm_inputs, chunk);
                let y = select_rows(&norm_targets, chunk);
                let loss = train_step(member, &mut tr.opt, &x, &y, cfg);
                if !loss.is_finite() {
                    return Err(Error::DivergedLoss { member: e });
                }
            }
        }
        epochs_run += 1;

        let mut epoch_nll = Vec::with_capacity(model.members.len());
        for (e, member) in model.members.iter().enumerate() {
            let nll = eval_member(member, &model.normalizer);
            if nll < trainers[e].best_nll {
                trainers[e].best_nll = nll;
                trainers[e].best_params = member.clone();
            }
            epoch_nll.push(nll);
        }
        let epoch_mean = mean(&epoch_nll);
        if epoch_mean < best_mean {
            best_mean = epoch_mean;
            since_improve = 0;
        } else {
            since_improve += 1;
        }
        if since_improve >= cfg.patience {
            break;
        }
    }

    let mut holdout_nll_per_member = Vec::with_capacity(model.members.len());
    for (e, member) in model.members.iter_mut().enumerate() {
        *member = trainers[e].best_params.clone();
        holdout_nll_per_member.push(trainers[e].best_nll);
    }
    let improved = mean(&holdout_nll_per_member) < init_mean;
    Ok(TrainReport {
        epochs_run,
        holdout_nll_per_member,
        improved,
    })
}

fn mean<T: Scalar>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |s, &x| s + x) / T::of(xs.len().max(1) as f64)
}

fn shuffle<R: Rng + ?Sized>(xs: &mut [usize], rng: &mut R) {
    // Fisher-Yates, explicit so the draw order is part of the determinism contract.
    for i in (1..xs.len()).rev() {
        let j = rng.gen_range(0..=i);
        xs.swap(i, j);
    }
}

fn select_rows<T: Scalar>(rows: &Array2<T>, idx: &[usize]) -> Array2<T> {
    let mut out = Array2::from_elem((idx.len(), rows.ncols()), T::zero());
    for (k, &i) in idx.iter().enumerate() {
        out.row_mut(k).assign(&rows.row(i));
    }
    out
}

/// Gradients of the minibatch training objective (mean Gaussian NLL in
/// normalized coordinates plus the log-variance bound penalty) for one
/// member. Pure; `train_ensemble` applies weight decay and the optimizer.
pub struct PnnGradients<T> {
    pub loss: T,
    pub net: MlpGrads<T>,
    pub logvar_min: Array1<T>,
    pub logvar_max: Array1<T>,
}

pub fn pnn_loss_and_grads<T: Scalar>(
    member: &PnnParams<T>,
    x: &Array2<T>,
    y: &Array2<T>,
    bound_reg: f64,
) -> PnnGradients<T> {
    let b = x.nrows();
    let d = y.ncols();
    let inv_b = T::one() / T::of(b as f64);
    let half = T::of(0.5);
    let reg = T::of(bound_reg);

    let (out, cache) = member.net.forward_cached(x);

    let mut loss = T::zero();
    let mut d_out = Array2::from_elem(out.raw_dim(), T::zero());
    let mut d_lv_min = Array1::from_elem(d, T::zero());
    let mut d_lv_max = Array1::from_elem(d, T::zero());

    for i in 0..b {
        for j in 0..d {
            let mu = out[[i, j]];
            let raw = out[[i, d + j]];
            let hi = member.logvar_max[j];
            let lo = member.logvar_min[j];
            let v1 = hi - softplus(hi - raw);
            let lv = lo + softplus(v1 - lo);
            let inv_var = (-lv).exp();
            let diff = mu - y[[i, j]];

            loss += half * (diff * diff * inv_var + lv + T::of(LN_2PI)) * inv_b;

            let d_mu = diff * inv_var * inv_b;
            let d_lv = half * (T::one() - diff * diff * inv_var) * inv_b;
            let s2 = sigmoid(v1 - lo);
            let s1 = sigmoid(hi - raw);
            d_out[[i, j]] = d_mu;
            d_out[[i, d + j]] = d_lv * s2 * s1;
            d_lv_min[j] += d_lv * (T::one() - s2);
            d_lv_max[j] += d_lv * s2 * (T::one() - s1);
        }
    }
    for j in 0..d {
        loss += reg * (member.logvar_max[j] - member.logvar_min[j]);
        d_lv_max[j] += reg;
        d_lv_min[j] -= reg;
    }

    let mut net = MlpGrads::zeros_like(&member.net);
    member.net.backward(&cache, &d_out, &mut net);
    PnnGradients {
        loss,
        net,
        logvar_min: d_lv_min,
        logvar_max: d_lv_max,
    }
}

/// One minibatch gradient step; returns the batch loss (NLL + bound penalty).
fn train_step<T: Scalar>(
    member: &mut PnnParams<T>,
    opt: &mut Adam<T>,
    x: &Array2<T>,
    y: &Array2<T>,
    cfg: &TrainConfig,
) -> T {
    let mut grads = pnn_loss_and_grads(member, x, y, cfg.bound_reg);

    // L2 decay on weight matrices only.
    let wd = T::of(cfg.weight_decay);
    if wd > T::zero() {
        for (g, l) in grads.net.layers.iter_mut().zip(&member.net.layers) {
            g.w.zip_mut_with(&l.w, |gv, &wv| *gv += wd * wv);
        }
    }

    let mut params = member.net.param_slices_mut();
    params.push(member.logvar_min.as_slice_mut().expect("standard layout"));
    params.push(member.logvar_max.as_slice_mut().expect("standard layout"));
    let mut grad_slices = grads.net.slices();
    grad_slices.push(grads.logvar_min.as_slice().expect("standard layout"));
    grad_slices.push(grads.logvar_max.as_slice().expect("standard layout"));
    opt.step(&mut params, &grad_slices);

    grads.loss
}

/// Mean raw-space Gaussian NLL of a member over a normalized holdout block.
fn holdout_nll<T: Scalar>(
    member: &PnnParams<T>,
    normalizer: &Normalizer<T>,
    predict_delta: bool,
    holdout_in_normalized: &Array2<T>,
    holdout_states: &Array2<T>,
    holdout_next: &Array2<T>,
) -> T {
    let n = holdout_in_normalized.nrows();
    let d = holdout_next.ncols();
    let out = member.net.forward(holdout_in_normalized);
    let half = T::of(0.5);
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..d {
            let ts = normalizer.target_std[j];
            let mut m = normalizer.target_mean[j] + ts * out[[i, j]];
            if predict_delta {
                m += holdout_states[[i, j]];
            }
            let lv = member.bound_logvar(j, out[[i, d + j]]);
            let v = ts * ts * lv.exp();
            let diff = holdout_next[[i, j]] - m;
            acc += half * (diff * diff / v + v.ln() + T::of(LN_2PI));
        }
    }
    acc / T::of(n.max(1) as f64)
}

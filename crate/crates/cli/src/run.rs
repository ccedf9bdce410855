//! Training loops: the uncertainty-adaptive loop, the fixed-length
//! baseline loop, the model-free baseline, and the spiral-data model fit.
//!
//! Seed protocol: every random stream is a fixed ChaCha substream of the
//! run seed, so a repeated run with the same seed writes byte-identical
//! logs.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use macura_core::buffer::{ReplayBuffer, Transition};
use macura_core::checkpoint;
use macura_core::env::{
    dataset_to_csv, generate_spiral_dataset, ControllerParams, Environment, NoisyActionEnv,
    PendulumEnv, PendulumParams,
};
use macura_core::model::{train_ensemble, EnsembleModel, ModelConfig, TrainConfig, TrainReport};
use macura_core::noise::{NoiseKind, NoiseProcess};
use macura_core::rollout::{
    compute_update_steps, macura_rollout_round, model_buffer_capacity, rank_based_rollout_round,
    sample_mixed_batch, vanilla_rollout_round, KappaTracker, RolloutConfig, RolloutRoundReport,
};
use macura_core::sac::{self, act, ActMode, AgentParams, SacConfig};
use macura_core::Scalar;

use crate::config::{Algorithm, Exploration, Precision, RunConfig, SchedulerChoice};
use crate::log::{EpochRow, KappaTrace, LearningCurve};
use crate::HarnessError;

/// Number of initial environment steps driven by uniform random actions
/// before the policy takes over.
const WARMUP_STEPS: usize = 500;

/// Seed of the shared evaluation suite (fixed across runs and run seeds).
const EVAL_SUITE_SEED: u64 = 0x4556_414c;

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const LEARNING_CURVE_FILE: &str = "learning_curve.csv";
pub const KAPPA_TRACE_FILE: &str = "kappa_trace.csv";
pub const MODEL_CHECKPOINT: &str = "model.ckpt";
pub const AGENT_CHECKPOINT: &str = "agent.ckpt";
pub const SPIRAL_DATASET_FILE: &str = "spiral_dataset.csv";
pub const MODEL_TRAINING_FILE: &str = "model_training.csv";

#[derive(Debug)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub curve: LearningCurve,
    pub kappa_trace: KappaTrace,
}

/// Fixed substream of the run seed.
pub fn run_substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn pendulum_params_from<T: Scalar>(cfg: &RunConfig) -> PendulumParams<T> {
    PendulumParams {
        mass: T::of(cfg.pendulum.mass),
        length: T::of(cfg.pendulum.length),
        gravity: T::of(cfg.pendulum.gravity),
        friction: T::of(cfg.pendulum.friction),
        dt: T::of(cfg.pendulum.dt),
        process_noise_var: [
            T::of(cfg.pendulum.process_noise_var[0]),
            T::of(cfg.pendulum.process_noise_var[1]),
        ],
        integrator_substeps: 10,
    }
}

pub fn build_env<T: Scalar>(cfg: &RunConfig) -> Result<Box<dyn Environment<T>>, HarnessError> {
    let mut env = PendulumEnv::new(pendulum_params_from::<T>(cfg));
    env.torque_limit = T::of(cfg.pendulum.torque_limit);
    env.start_angle_range = (
        T::of(cfg.pendulum.start_angle_range[0]),
        T::of(cfg.pendulum.start_angle_range[1]),
    );
    env.start_velocity_range = (
        T::of(cfg.pendulum.start_velocity_range[0]),
        T::of(cfg.pendulum.start_velocity_range[1]),
    );
    env.step_limit = cfg.pendulum.episode_limit;
    if cfg.pendulum.action_noise_sigma > 0.0 {
        Ok(Box::new(NoisyActionEnv::new(
            env,
            T::of(cfg.pendulum.action_noise_sigma),
        )?))
    } else {
        Ok(Box::new(env))
    }
}

fn sac_config_from(cfg: &RunConfig) -> SacConfig {
    SacConfig {
        discount: cfg.sac.discount_gamma,
        tau: cfg.sac.tau,
        actor_lr: cfg.sac.actor_lr,
        critic_lr: cfg.sac.critic_lr,
        temperature_lr: cfg.sac.temperature_lr,
        batch_size: cfg.sac.batch_size,
        target_entropy: cfg.sac.sac_target_entropy,
        env_data_fraction: cfg.sac.env_data_fraction,
        auto_entropy_tuning: cfg.sac.auto_entropy_tuning,
        fixed_temperature: cfg.sac.fixed_temperature,
        hidden_layers: cfg.sac.actor_layers,
        hidden_width: cfg.sac.actor_nodes_per_layer,
        activation: macura_core::nn::Activation::Relu,
    }
}

fn model_config_from(cfg: &RunConfig) -> ModelConfig {
    ModelConfig {
        state_dim: 2,
        action_dim: 1,
        ensemble_size: cfg.model.pnns_per_pe,
        hidden_layers: cfg.model.pnn_layers,
        hidden_width: cfg.model.pnn_nodes_per_layer,
        activation: cfg.model_activation(),
        predict_delta: true,
        logvar_min_init: cfg.model.logvar_min_init,
        logvar_max_init: cfg.model.logvar_max_init,
    }
}

fn train_config_from(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        learning_rate: cfg.model.learning_rate,
        batch_size: cfg.model.batch_size,
        max_epochs: cfg.model.max_epochs,
        patience: cfg.model.patience,
        holdout_fraction: cfg.model.holdout_fraction,
        min_train_size: cfg.model.min_train_size,
        weight_decay: cfg.model.weight_decay,
        bound_reg: 0.01,
    }
}

fn noise_kind(e: Exploration) -> NoiseKind {
    match e {
        Exploration::Deterministic => NoiseKind::Deterministic,
        Exploration::White => NoiseKind::White,
        Exploration::Pink => NoiseKind::Pink,
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub mean_return: f64,
    pub returns: Vec<f64>,
    pub episode_length: usize,
}

impl EvalReport {
    pub fn return_std(&self) -> f64 {
        let n = self.returns.len() as f64;
        let var = self
            .returns
            .iter()
            .map(|r| (r - self.mean_return) * (r - self.mean_return))
            .sum::<f64>()
            / n;
        var.sqrt()
    }
}

/// Runs `episodes` full episodes with deterministic-mode actions and
/// returns the undiscounted per-episode return list and its mean. The
/// environment instance is the caller's; training buffers are untouched.
pub fn evaluate_policy<T: Scalar>(
    env: &mut dyn Environment<T>,
    agent: &AgentParams<T>,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EvalReport, HarnessError> {
    let mut returns = Vec::with_capacity(episodes);
    let limit = env.episode_limit();
    for _ in 0..episodes {
        let mut state = env.reset(rng);
        let mut total = 0.0;
        loop {
            let action = act(agent, &state, ActMode::Deterministic, rng)?;
            let out = env.step(&action, rng)?;
            total += out.reward.as_f64();
            state = out.next_state;
            if out.done {
                break;
            }
        }
        if !total.is_finite() {
            return Err(HarnessError::Numerical("non-finite evaluation return".into()));
        }
        returns.push(total);
    }
    let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
    Ok(EvalReport {
        mean_return,
        returns,
        episode_length: limit,
    })
}

/// Entry point: dispatches on precision and algorithm, writes the run
/// directory (config snapshot, learning curve, kappa trace, checkpoints).
pub fn execute_run(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(CONFIG_SNAPSHOT), cfg.to_toml())?;
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg, out_dir),
        Precision::F64 => run_typed::<f64>(cfg, out_dir),
    }
}

fn run_typed<T: Scalar>(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutput, HarnessError> {
    match cfg.algorithm {
        Algorithm::ToyModel => run_toy_model::<T>(cfg, out_dir),
        _ => run_rl::<T>(cfg, out_dir),
    }
}

/// Spiral dataset generation plus one ensemble fit; no agent is trained.
fn run_toy_model<T: Scalar>(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutput, HarnessError> {
    let params = pendulum_params_from::<T>(cfg);
    let controller = ControllerParams::default();
    let mut data_rng = run_substream(cfg.seed, 10);
    let data = generate_spiral_dataset(&params, &controller, &mut data_rng);
    std::fs::write(out_dir.join(SPIRAL_DATASET_FILE), dataset_to_csv(&data))?;

    let mut d_env = ReplayBuffer::new(data.len());
    for t in &data {
        d_env.push(t.clone());
    }

    let mut init_rng = run_substream(cfg.seed, 0);
    let mut model_rng = run_substream(cfg.seed, 3);
    let mut model: EnsembleModel<T> = EnsembleModel::new(model_config_from(cfg), &mut init_rng);
    let report = train_ensemble(&mut model, &d_env, &train_config_from(cfg), &mut model_rng)?;
    checkpoint::save_model(&out_dir.join(MODEL_CHECKPOINT), &model)?;

    let mut text = String::from("epochs_run,mean_holdout_nll,improved\n");
    text.push_str(&format!(
        "{},{},{}\n",
        report.epochs_run,
        report.mean_holdout_nll().as_f64(),
        report.improved
    ));
    std::fs::write(out_dir.join(MODEL_TRAINING_FILE), text)?;

    Ok(RunOutput {
        out_dir: out_dir.to_path_buf(),
        curve: LearningCurve::default(),
        kappa_trace: KappaTrace::default(),
    })
}

struct EpochAccumulator {
    stored: usize,
    rounds: usize,
    length_sum: f64,
    updates: usize,
    last_round: Option<RolloutRoundReport>,
}

/// The Dyna-style / model-free training loop.
fn run_rl<T: Scalar>(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutput, HarnessError> {
    let sac_cfg = sac_config_from(cfg);
    let uses_model = cfg.algorithm != Algorithm::Sac;
    let scheduler = match cfg.algorithm {
        Algorithm::Macura => SchedulerChoice::Macura,
        _ => cfg.rollout.scheduler,
    };
    let max_schedule_length = cfg
        .rollout
        .rollout_length_schedule
        .as_ref()
        .map(|s| s.length_to.max(cfg.rollout.rollout_length))
        .unwrap_or(cfg.rollout.rollout_length);

    let mut init_rng = run_substream(cfg.seed, 0);
    let mut env_rng = run_substream(cfg.seed, 1);
    let mut noise_rng = run_substream(cfg.seed, 2);
    let mut model_rng = run_substream(cfg.seed, 3);
    let mut sac_rng = run_substream(cfg.seed, 4);
    let mut round_seed_rng = run_substream(cfg.seed, 6);
    let mut warmup_rng = run_substream(cfg.seed, 7);

    let mut env = build_env::<T>(cfg)?;
    let mut model: EnsembleModel<T> = EnsembleModel::new(model_config_from(cfg), &mut init_rng);
    let mut agent: AgentParams<T> = AgentParams::new(2, 1, &sac_cfg, &mut init_rng);
    let train_cfg = train_config_from(cfg);

    let mut d_env: ReplayBuffer<T> = ReplayBuffer::new(cfg.env_buffer_capacity);
    let mut d_mod: ReplayBuffer<T> = ReplayBuffer::new(model_buffer_capacity(
        cfg.rollout.rollouts_per_round,
        max_schedule_length,
        cfg.rollout.retain_rounds,
    ));
    let mut tracker = KappaTracker::new(
        cfg.rollout.quantile_factor_zeta,
        cfg.rollout.scaling_factor_xi,
    )?;
    let mut noise: NoiseProcess<T> = NoiseProcess::new(
        noise_kind(cfg.exploration),
        1,
        cfg.pendulum.episode_limit,
        cfg.pink_beta,
    );

    let mut curve = LearningCurve::default();
    let mut kappa_trace = KappaTrace::default();
    let mut state = env.reset(&mut env_rng);
    noise.reset(&mut noise_rng);

    let mut total_steps = 0usize;
    let mut last_train: Option<TrainReport<T>> = None;
    let mut last_eval: Option<EvalReport> = None;

    for epoch in 1..=cfg.epochs {
        let t_max = cfg
            .rollout
            .rollout_length_schedule
            .as_ref()
            .map(|s| s.length_at(epoch))
            .unwrap_or(cfg.rollout.rollout_length);
        let rollout_cfg = RolloutConfig {
            num_rollouts: cfg.rollout.rollouts_per_round,
            max_length: t_max,
            rank_keep_fraction: cfg.rollout.rank_keep_fraction,
        };

        let mut acc = EpochAccumulator {
            stored: 0,
            rounds: 0,
            length_sum: 0.0,
            updates: 0,
            last_round: None,
        };

        for _ in 0..cfg.steps_per_epoch {
            // Environment interaction with the configured exploration noise.
            let action = if total_steps < WARMUP_STEPS {
                vec![T::of(warmup_rng.gen_range(-1.0..1.0))]
            } else {
                let eps = noise.next_epsilon()?;
                sac::act_with_epsilon(&agent, &state, &eps)?
            };
            let out = env.step(&action, &mut env_rng)?;
            d_env.push(Transition {
                state: state.clone(),
                action,
                reward: out.reward,
                // Episode ends are timeouts, never absorbing terminals.
                done: false,
                next_state: out.next_state.clone(),
            });
            state = out.next_state;
            total_steps += 1;
            if out.done {
                state = env.reset(&mut env_rng);
                noise.reset(&mut noise_rng);
            }

            // Model retrain + rollout round every R steps.
            if uses_model
                && total_steps.is_multiple_of(cfg.steps_before_retrain)
                && d_env.len() >= train_cfg.min_train_size.max(2)
            {
                let report = train_ensemble(&mut model, &d_env, &train_cfg, &mut model_rng)?;
                last_train = Some(report);
                let round_seed = round_seed_rng.gen::<u64>();
                let reward_fn = |s: &[T], a: &[T]| env.reward(s, a);
                let round = match scheduler {
                    SchedulerChoice::Macura => macura_rollout_round(
                        &model,
                        &agent,
                        &reward_fn,
                        &d_env,
                        &mut d_mod,
                        &rollout_cfg,
                        &mut tracker,
                        round_seed,
                    )?,
                    SchedulerChoice::Vanilla => vanilla_rollout_round(
                        &model,
                        &agent,
                        &reward_fn,
                        &d_env,
                        &mut d_mod,
                        &rollout_cfg,
                        round_seed,
                    )?,
                    SchedulerChoice::RankBased => rank_based_rollout_round(
                        &model,
                        &agent,
                        &reward_fn,
                        &d_env,
                        &mut d_mod,
                        &rollout_cfg,
                        round_seed,
                    )?,
                };
                if scheduler == SchedulerChoice::Macura {
                    kappa_trace.push(
                        tracker.rounds(),
                        total_steps,
                        round.base_uncertainty,
                        round.kappa_used,
                    );
                }
                acc.stored += round.stored_transitions;
                acc.rounds += 1;
                acc.length_sum += round.mean_rollout_length;
                acc.last_round = Some(round);
            }

            // Policy updates: adaptive count for macura, fixed otherwise.
            let g = match cfg.algorithm {
                Algorithm::Macura => {
                    compute_update_steps(cfg.rollout.sac_updates_g_max, d_mod.len(), d_mod.capacity())
                        as usize
                }
                // The vanilla loop performs its fixed G updates from the very
                // first environment step.
                Algorithm::Mbpo => cfg.rollout.sac_updates_g as usize,
                Algorithm::Sac => {
                    if d_env.len() >= sac_cfg.batch_size {
                        cfg.rollout.sac_updates_g as usize
                    } else {
                        0
                    }
                }
                Algorithm::ToyModel => unreachable!(),
            };
            for _ in 0..g {
                let batch = sample_mixed_batch(
                    &d_env,
                    &d_mod,
                    sac_cfg.batch_size,
                    sac_cfg.env_data_fraction,
                    &mut sac_rng,
                )?;
                sac::update(&mut agent, &batch, &sac_cfg, &mut sac_rng)?;
            }
            acc.updates += g;
        }

        // Periodic deterministic evaluation on a fresh environment instance.
        // The eval stream is a fixed constant, independent of the run seed:
        // every evaluation (across epochs and across seeds) replays the same
        // start states and noise realizations, one shared evaluation suite.
        if (epoch - 1) % cfg.eval_every_epochs == 0 || epoch == cfg.epochs {
            let mut eval_env = build_env::<T>(cfg)?;
            let mut eval_rng = run_substream(EVAL_SUITE_SEED, 1000);
            last_eval = Some(evaluate_policy(
                eval_env.as_mut(),
                &agent,
                cfg.eval_episodes,
                &mut eval_rng,
            )?);
        }
        let eval = last_eval.as_ref().expect("first epoch always evaluates");
        if !eval.mean_return.is_finite() {
            return Err(HarnessError::Numerical("non-finite evaluation return".into()));
        }

        let (kappa, base_u) = match (&acc.last_round, scheduler) {
            (Some(r), SchedulerChoice::Macura) => (r.kappa_used, r.base_uncertainty),
            _ => (f64::NAN, f64::NAN),
        };
        curve.push(EpochRow {
            epoch,
            env_steps: total_steps,
            eval_return_mean: eval.mean_return,
            eval_return_std: eval.return_std(),
            kappa,
            base_uncertainty: base_u,
            mean_rollout_length: if acc.rounds > 0 {
                acc.length_sum / acc.rounds as f64
            } else {
                f64::NAN
            },
            stored_transitions: acc.stored,
            sac_updates: acc.updates,
            model_holdout_nll: last_train
                .as_ref()
                .map(|t| t.mean_holdout_nll().as_f64())
                .unwrap_or(f64::NAN),
            temperature: sac::entropy_temperature(&agent).as_f64(),
        });

        if epoch % cfg.checkpoint_every_epochs == 0 || epoch == cfg.epochs {
            checkpoint::save_agent(&out_dir.join(AGENT_CHECKPOINT), &agent)?;
            if uses_model && model.normalizer.fitted {
                checkpoint::save_model(&out_dir.join(MODEL_CHECKPOINT), &model)?;
            }
        }
        curve.write(&out_dir.join(LEARNING_CURVE_FILE))?;
        if uses_model && scheduler == SchedulerChoice::Macura {
            kappa_trace.write(&out_dir.join(KAPPA_TRACE_FILE))?;
        }
        if let Some(target) = cfg.stop_at_eval_return {
            if eval.mean_return >= target {
                checkpoint::save_agent(&out_dir.join(AGENT_CHECKPOINT), &agent)?;
                if uses_model && model.normalizer.fitted {
                    checkpoint::save_model(&out_dir.join(MODEL_CHECKPOINT), &model)?;
                }
                break;
            }
        }
    }

    Ok(RunOutput {
        out_dir: out_dir.to_path_buf(),
        curve,
        kappa_trace,
    })
}

/// First env-step count at which the evaluation return reaches `threshold`.
pub fn steps_to_threshold(curve: &LearningCurve, threshold: f64) -> Option<usize> {
    curve
        .rows
        .iter()
        .find(|r| r.eval_return_mean >= threshold)
        .map(|r| r.env_steps)
}

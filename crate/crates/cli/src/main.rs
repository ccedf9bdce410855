use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use macura::config::{Algorithm, Precision, RunConfig};
use macura::export::{export_artifacts, GRID_STUDY_FILE};
use macura::run::{
    build_env, evaluate_policy, execute_run, pendulum_params_from, run_substream,
    AGENT_CHECKPOINT, CONFIG_SNAPSHOT, MODEL_CHECKPOINT,
};
use macura::study::{bound_check, grid_study_scaled, BoundReport, DeltaPEstimate, GridSpec};
use macura::HarnessError;
use macura_core::checkpoint;
use macura_core::env::{ControllerParams, FlControllerPolicy};
use macura_core::rollout::RolloutPolicy;
use macura_core::Scalar;

#[derive(Parser)]
#[command(name = "macura", version, about = "Dyna-style model-based RL with uncertainty-aware rollout adaption")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training (or toy model-fit) configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory for logs and checkpoints.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpointed agent with deterministic actions.
    Eval {
        /// Run directory holding agent.ckpt and config.toml.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Uncertainty/misalignment grid over the state box.
    GridStudy {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Grid resolution, e.g. 100x100.
        #[arg(long, default_value = "100x100")]
        resolution: String,
        /// Uncertainty threshold defining the trusted set.
        #[arg(long)]
        kappa: f64,
    },
    /// Monte-Carlo diagnostic of the improvement bound.
    BoundCheck {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        kappa: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 200)]
        rollouts: usize,
        /// Policy to diagnose: the feedback controller or the checkpointed agent.
        #[arg(long, default_value = "controller")]
        policy: String,
        #[arg(long, default_value_t = 10)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-export derived artifacts (SVG heat maps) of a completed run.
    Export {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_run_config(dir: &std::path::Path) -> Result<RunConfig, HarnessError> {
    RunConfig::from_path(&dir.join(CONFIG_SNAPSHOT))
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = RunConfig::from_path(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let output = execute_run(&cfg, &out)?;
            if let Some(last) = output.curve.rows.last() {
                println!(
                    "run complete: {} epochs, {} env steps, eval return {:.3}",
                    last.epoch, last.env_steps, last.eval_return_mean
                );
            } else {
                println!("run complete: {}", out.display());
            }
            Ok(())
        }
        Command::Eval {
            checkpoint: dir,
            episodes,
            seed,
        } => {
            let cfg = load_run_config(&dir)?;
            match cfg.precision {
                Precision::F32 => eval_cmd::<f32>(&cfg, &dir, episodes, seed),
                Precision::F64 => eval_cmd::<f64>(&cfg, &dir, episodes, seed),
            }
        }
        Command::GridStudy {
            checkpoint: dir,
            resolution,
            kappa,
        } => {
            let cfg = load_run_config(&dir)?;
            let (rows, cols) = parse_resolution(&resolution)?;
            match cfg.precision {
                Precision::F32 => grid_cmd::<f32>(&cfg, &dir, rows, cols, kappa),
                Precision::F64 => grid_cmd::<f64>(&cfg, &dir, rows, cols, kappa),
            }
        }
        Command::BoundCheck {
            checkpoint: dir,
            kappa,
            gamma,
            rollouts,
            policy,
            horizon,
            seed,
        } => {
            let cfg = load_run_config(&dir)?;
            match cfg.precision {
                Precision::F32 => {
                    bound_cmd::<f32>(&cfg, &dir, kappa, gamma, rollouts, &policy, horizon, seed)
                }
                Precision::F64 => {
                    bound_cmd::<f64>(&cfg, &dir, kappa, gamma, rollouts, &policy, horizon, seed)
                }
            }
        }
        Command::Export { run } => {
            let written = export_artifacts(&run)?;
            for w in &written {
                println!("wrote {}", w.display());
            }
            if written.is_empty() {
                println!("nothing to export (no grid study in {})", run.display());
            }
            Ok(())
        }
    }
}

fn parse_resolution(s: &str) -> Result<(usize, usize), HarnessError> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 2 {
        return Err(HarnessError::Config(format!(
            "resolution must look like 100x100, got {s}"
        )));
    }
    let rows = parts[0]
        .parse()
        .map_err(|e| HarnessError::Config(format!("bad resolution rows: {e}")))?;
    let cols = parts[1]
        .parse()
        .map_err(|e| HarnessError::Config(format!("bad resolution cols: {e}")))?;
    if rows == 0 || cols == 0 {
        return Err(HarnessError::Config("resolution must be positive".into()));
    }
    Ok((rows, cols))
}

fn eval_cmd<T: Scalar>(
    cfg: &RunConfig,
    dir: &std::path::Path,
    episodes: usize,
    seed: u64,
) -> Result<(), HarnessError> {
    let agent: macura_core::sac::AgentParams<T> = checkpoint::load_agent(
        &dir.join(AGENT_CHECKPOINT),
        &macura_core::sac::SacConfig::default(),
    )?;
    let mut env = build_env::<T>(cfg)?;
    let mut rng = run_substream(seed, 9000);
    let report = evaluate_policy(env.as_mut(), &agent, episodes, &mut rng)?;
    println!(
        "eval over {} episodes of {} steps: mean return {:.4}, std {:.4}",
        episodes,
        report.episode_length,
        report.mean_return,
        report.return_std()
    );
    for (i, r) in report.returns.iter().enumerate() {
        println!("episode {i}: {r:.4}");
    }
    Ok(())
}

fn grid_cmd<T: Scalar>(
    cfg: &RunConfig,
    dir: &std::path::Path,
    rows: usize,
    cols: usize,
    kappa: f64,
) -> Result<(), HarnessError> {
    let model: macura_core::model::EnsembleModel<T> =
        checkpoint::load_model(&dir.join(MODEL_CHECKPOINT))?;
    let pendulum = pendulum_params_from::<T>(cfg);
    let controller = ControllerParams::default();
    let spec = GridSpec {
        rows,
        cols,
        ..GridSpec::default()
    };
    // Models from RL runs are trained on unit actions.
    let action_scale = match cfg.algorithm {
        Algorithm::ToyModel => 1.0,
        _ => cfg.pendulum.torque_limit,
    };
    let study = grid_study_scaled(&model, &controller, &pendulum, &spec, kappa, action_scale)?;
    let path = dir.join(GRID_STUDY_FILE);
    std::fs::write(&path, study.to_csv())?;
    let (inside, outside) = study.mean_d_split();
    println!(
        "grid {}x{}: mean d_tv inside E {:.4}, outside {:.4}; {} cells in E",
        rows,
        cols,
        inside,
        outside,
        study.in_e.iter().filter(|&&b| b).count()
    );
    println!("wrote {}", path.display());
    Ok(())
}

struct ScaledAgentPolicy<T: Scalar> {
    agent: macura_core::sac::AgentParams<T>,
}

impl<T: Scalar> RolloutPolicy<T> for ScaledAgentPolicy<T> {
    fn action_dim(&self) -> usize {
        1
    }

    fn sample_action(
        &self,
        state: &[T],
        rng: &mut dyn rand::RngCore,
    ) -> macura_core::Result<Vec<T>> {
        macura_core::sac::act(
            &self.agent,
            state,
            macura_core::sac::ActMode::Stochastic,
            rng,
        )
    }
}

/// Wraps the torque-unit controller so its actions match a model trained on
/// unit actions; the bound diagnostic rescales them back to torques.
struct ScaledControllerPolicy<T: Scalar> {
    inner: FlControllerPolicy<T>,
    divisor: T,
}

impl<T: Scalar> RolloutPolicy<T> for ScaledControllerPolicy<T> {
    fn action_dim(&self) -> usize {
        1
    }

    fn sample_action(
        &self,
        state: &[T],
        rng: &mut dyn rand::RngCore,
    ) -> macura_core::Result<Vec<T>> {
        let torque = self.inner.sample_action(state, rng)?;
        Ok(vec![torque[0] / self.divisor])
    }
}

#[allow(clippy::too_many_arguments)]
fn bound_cmd<T: Scalar>(
    cfg: &RunConfig,
    dir: &std::path::Path,
    kappa: f64,
    gamma: f64,
    rollouts: usize,
    policy: &str,
    horizon: usize,
    seed: u64,
) -> Result<(), HarnessError> {
    let model: macura_core::model::EnsembleModel<T> =
        checkpoint::load_model(&dir.join(MODEL_CHECKPOINT))?;
    let pendulum = pendulum_params_from::<T>(cfg);
    let controller = ControllerParams::<T>::default();

    let mut rng = run_substream(seed, 8000);
    let mut env = build_env::<T>(cfg)?;
    let mut candidates = Vec::new();
    let action_scale = match cfg.algorithm {
        Algorithm::ToyModel => 1.0,
        _ => cfg.pendulum.torque_limit,
    };

    let report: BoundReport = match policy {
        "controller" => {
            let fl = FlControllerPolicy {
                controller: controller.clone(),
                pendulum: pendulum.clone(),
            };
            // Closed-loop spiral states are where a toy model is trained.
            let data = macura_core::env::generate_spiral_dataset(&pendulum, &controller, &mut rng);
            candidates.extend(data.iter().map(|t| t.state.clone()));
            let policy = ScaledControllerPolicy {
                inner: fl,
                divisor: T::of(action_scale),
            };
            bound_check(
                &model,
                &policy,
                &pendulum,
                &controller,
                &candidates,
                kappa,
                gamma,
                horizon,
                rollouts,
                DeltaPEstimate::Grid(GridSpec::default()),
                action_scale,
                seed,
            )?
        }
        "agent" => {
            let agent: macura_core::sac::AgentParams<T> = checkpoint::load_agent(
                &dir.join(AGENT_CHECKPOINT),
                &macura_core::sac::SacConfig::default(),
            )?;
            let policy = ScaledAgentPolicy { agent };
            for _ in 0..5 {
                let mut s = env.reset(&mut rng);
                for _ in 0..cfg.pendulum.episode_limit {
                    candidates.push(s.clone());
                    let a = policy.sample_action(&s, &mut rng)?;
                    let out = env.step(&a, &mut rng)?;
                    s = out.next_state;
                    if out.done {
                        break;
                    }
                }
            }
            bound_check(
                &model,
                &policy,
                &pendulum,
                &controller,
                &candidates,
                kappa,
                gamma,
                horizon,
                rollouts,
                DeltaPEstimate::Visitation,
                action_scale,
                seed,
            )?
        }
        other => {
            return Err(HarnessError::Config(format!(
                "policy must be `controller` or `agent`, got `{other}`"
            )))
        }
    };

    let path = dir.join("bound_check.csv");
    std::fs::write(&path, report.to_csv())?;
    println!(
        "eta_hat {:.6}  eta_tilde {:.6}  |diff| {:.6}",
        report.eta_hat,
        report.eta_tilde,
        (report.eta_hat - report.eta_tilde).abs()
    );
    println!(
        "delta_p_sup {:.6}  C {:.6}  3SE {:.6}  holds: {}",
        report.delta_p_sup, report.c_bound, report.se_margin, report.holds
    );
    println!(
        "approx (one-sided stopping): eta_tilde {:.6}  C {:.6}  holds: {}",
        report.eta_tilde_approx, report.c_bound_approx, report.holds_approx
    );
    println!("wrote {}", path.display());
    Ok(())
}

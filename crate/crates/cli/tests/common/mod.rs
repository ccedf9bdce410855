//! Shared fixtures for the harness and acceptance suites: exact and
//! corrupted stand-in dynamics models and small run configurations.

use macura_core::env::{pendulum_mean_step, PendulumParams};
use macura_core::gaussian::DiagGaussian;
use macura_core::model::DynamicsEnsemble;
use macura_core::Result;

use macura::config::{Algorithm, RunConfig};

/// Ensemble whose members all equal the true transition kernel
/// N(mean_step(s, torque_scale * a), Sigma).
pub struct PerfectPendulumModel {
    pub params: PendulumParams<f64>,
    pub members: usize,
    pub torque_scale: f64,
}

impl DynamicsEnsemble<f64> for PerfectPendulumModel {
    fn num_members(&self) -> usize {
        self.members
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn member_predict(&self, _e: usize, s: &[f64], a: &[f64]) -> Result<DiagGaussian<f64>> {
        let mean = pendulum_mean_step(&self.params, [s[0], s[1]], self.torque_scale * a[0])?;
        DiagGaussian::new(
            mean.to_vec(),
            vec![
                self.params.process_noise_var[0],
                self.params.process_noise_var[1],
            ],
        )
    }
}

/// Exact kernel with a per-member mean bias, so members disagree and every
/// member is misaligned with the truth.
#[allow(dead_code)]
pub struct CorruptedPendulumModel {
    pub inner: PerfectPendulumModel,
    pub bias: f64,
}

impl DynamicsEnsemble<f64> for CorruptedPendulumModel {
    fn num_members(&self) -> usize {
        self.inner.members
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn member_predict(&self, e: usize, s: &[f64], a: &[f64]) -> Result<DiagGaussian<f64>> {
        let g = self.inner.member_predict(e, s, a)?;
        let offset = self.bias * (e as f64 - (self.inner.members as f64 - 1.0) / 2.0);
        let mean: Vec<f64> = g.mean().iter().map(|m| m + offset).collect();
        DiagGaussian::new(mean, g.var().to_vec())
    }
}

/// A small-but-real macura configuration that runs in seconds.
#[allow(clippy::field_reassign_with_default)]
pub fn small_macura_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.algorithm = Algorithm::Macura;
    cfg.epochs = 2;
    cfg.steps_per_epoch = 300;
    cfg.steps_before_retrain = 150;
    cfg.eval_episodes = 2;
    cfg.model.pnns_per_pe = 3;
    cfg.model.pnn_layers = 2;
    cfg.model.pnn_nodes_per_layer = 24;
    cfg.model.min_train_size = 100;
    cfg.model.max_epochs = 8;
    cfg.sac.batch_size = 64;
    cfg.sac.actor_nodes_per_layer = 32;
    cfg.sac.critic_nodes_per_layer = 32;
    cfg.rollout.rollouts_per_round = 16;
    cfg.rollout.rollout_length = 5;
    cfg.rollout.sac_updates_g_max = 3;
    cfg
}

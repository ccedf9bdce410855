//! Run configuration: a nested TOML file whose keys follow the
//! hyperparameter vocabulary of the training loops (steps_per_epoch,
//! pnns_per_pe, rollouts_per_round, quantile_factor_zeta, ...).

use serde::{Deserialize, Serialize};
use std::path::Path;

use macura_core::nn::Activation;

use crate::HarnessError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Uncertainty-adaptive rollouts with update-count adaption.
    Macura,
    /// Fixed-length (or rank-filtered) rollouts with fixed update count.
    Mbpo,
    /// Model-free baseline; no dynamics model, one buffer.
    Sac,
    /// Spiral-data model fit only (no agent); feeds the grid diagnostics.
    ToyModel,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Exploration {
    Deterministic,
    White,
    Pink,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerChoice {
    Vanilla,
    Macura,
    RankBased,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumConfig {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub friction: f64,
    pub dt: f64,
    pub process_noise_var: [f64; 2],
    pub torque_limit: f64,
    pub episode_limit: usize,
    pub start_angle_range: [f64; 2],
    pub start_velocity_range: [f64; 2],
    /// Unobserved action-noise std (the noisy-action wrapper); 0 disables.
    pub action_noise_sigma: f64,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            mass: 0.1,
            length: 1.0,
            gravity: 9.81,
            friction: 0.1,
            dt: 0.01,
            process_noise_var: [1e-6, 1e-3],
            torque_limit: 5.0,
            episode_limit: 200,
            start_angle_range: [-3.0, 3.0],
            start_velocity_range: [-1.0, 1.0],
            action_noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Ensemble size E.
    pub pnns_per_pe: usize,
    pub pnn_layers: usize,
    pub pnn_nodes_per_layer: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub holdout_fraction: f64,
    pub min_train_size: usize,
    pub weight_decay: f64,
    pub logvar_min_init: f64,
    pub logvar_max_init: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            pnns_per_pe: 5,
            pnn_layers: 4,
            pnn_nodes_per_layer: 64,
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 50,
            patience: 5,
            holdout_fraction: 0.1,
            min_train_size: 250,
            weight_decay: 5e-5,
            logvar_min_init: -10.0,
            logvar_max_init: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacSection {
    pub discount_gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub batch_size: usize,
    pub sac_target_entropy: f64,
    pub auto_entropy_tuning: bool,
    pub fixed_temperature: f64,
    /// Fraction of each training batch drawn from D_env (rest from D_mod).
    pub env_data_fraction: f64,
    pub actor_layers: usize,
    pub actor_nodes_per_layer: usize,
    pub critic_layers: usize,
    pub critic_nodes_per_layer: usize,
}

impl Default for SacSection {
    fn default() -> Self {
        Self {
            discount_gamma: 0.99,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            temperature_lr: 3e-4,
            batch_size: 128,
            sac_target_entropy: -1.0,
            auto_entropy_tuning: true,
            fixed_temperature: 0.2,
            env_data_fraction: 0.05,
            actor_layers: 2,
            actor_nodes_per_layer: 128,
            critic_layers: 2,
            critic_nodes_per_layer: 128,
        }
    }
}

/// Linear rollout-length schedule for the vanilla scheduler: T_max
/// interpolates from `length_from` at `epoch_from` to `length_to` at
/// `epoch_to` (nearest-integer, clamped outside).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct RolloutLengthSchedule {
    pub length_from: usize,
    pub length_to: usize,
    pub epoch_from: usize,
    pub epoch_to: usize,
}

impl RolloutLengthSchedule {
    /// T_max for a 1-based epoch index, by exact integer rounding.
    pub fn length_at(&self, epoch: usize) -> usize {
        if epoch <= self.epoch_from {
            return self.length_from;
        }
        if epoch >= self.epoch_to {
            return self.length_to;
        }
        let den = (self.epoch_to - self.epoch_from) as u64;
        let num = self.length_from as u64 * den
            + (self.length_to as u64 - self.length_from as u64) * (epoch - self.epoch_from) as u64;
        // round(num / den), ties away from zero.
        ((2 * num + den) / (2 * den)) as usize
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    pub scheduler: SchedulerChoice,
    /// Parallel rollouts per round (M).
    pub rollouts_per_round: usize,
    /// Rollout length cap (T_max).
    pub rollout_length: usize,
    pub rollout_length_schedule: Option<RolloutLengthSchedule>,
    pub quantile_factor_zeta: f64,
    pub scaling_factor_xi: f64,
    /// D_mod keeps the most recent `retain_rounds` rounds.
    pub retain_rounds: usize,
    /// Update-count cap for the adaptive rule (macura).
    pub sac_updates_g_max: u32,
    /// Fixed update count (mbpo and the sac baseline).
    pub sac_updates_g: u32,
    pub rank_keep_fraction: f64,
}

impl Default for RolloutSection {
    fn default() -> Self {
        Self {
            scheduler: SchedulerChoice::Macura,
            rollouts_per_round: 128,
            rollout_length: 10,
            rollout_length_schedule: None,
            quantile_factor_zeta: 0.95,
            scaling_factor_xi: 1.0,
            retain_rounds: 4,
            sac_updates_g_max: 10,
            sac_updates_g: 1,
            rank_keep_fraction: 0.875,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub environment: String,
    pub algorithm: Algorithm,
    pub precision: Precision,
    pub seed: u64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Environment steps between model retrains (R).
    pub steps_before_retrain: usize,
    pub eval_episodes: usize,
    pub eval_every_epochs: usize,
    pub checkpoint_every_epochs: usize,
    pub exploration: Exploration,
    pub pink_beta: f64,
    pub env_buffer_capacity: usize,
    /// Optional early stop: finish the run once an evaluation reaches this
    /// mean return.
    pub stop_at_eval_return: Option<f64>,
    pub pendulum: PendulumConfig,
    pub model: ModelSection,
    pub sac: SacSection,
    pub rollout: RolloutSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            environment: "pendulum".into(),
            algorithm: Algorithm::Macura,
            precision: Precision::F32,
            seed: 0,
            epochs: 15,
            steps_per_epoch: 1000,
            steps_before_retrain: 250,
            eval_episodes: 10,
            eval_every_epochs: 1,
            checkpoint_every_epochs: 5,
            exploration: Exploration::Pink,
            pink_beta: 1.0,
            env_buffer_capacity: 1_000_000,
            stop_at_eval_return: None,
            pendulum: PendulumConfig::default(),
            model: ModelSection::default(),
            sac: SacSection::default(),
            rollout: RolloutSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.environment != "pendulum" {
            return bad(format!("unknown environment `{}`", self.environment));
        }
        if self.epochs < 1 || self.steps_per_epoch < 1 || self.steps_before_retrain < 1 {
            return bad("epochs, steps_per_epoch, steps_before_retrain must be >= 1".into());
        }
        if self.eval_episodes < 1 || self.eval_every_epochs < 1 || self.checkpoint_every_epochs < 1
        {
            return bad("evaluation and checkpoint cadences must be >= 1".into());
        }
        if !(self.rollout.quantile_factor_zeta > 0.0 && self.rollout.quantile_factor_zeta < 1.0) {
            return bad(format!(
                "quantile_factor_zeta must be in (0, 1), got {}",
                self.rollout.quantile_factor_zeta
            ));
        }
        if self.rollout.scaling_factor_xi <= 0.0 {
            return bad("scaling_factor_xi must be positive".into());
        }
        if self.rollout.rollouts_per_round < 1
            || self.rollout.rollout_length < 1
            || self.rollout.retain_rounds < 1
        {
            return bad("rollouts_per_round, rollout_length, retain_rounds must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.rollout.rank_keep_fraction) {
            return bad("rank_keep_fraction must be in [0, 1]".into());
        }
        if let Some(s) = &self.rollout.rollout_length_schedule {
            if s.epoch_to <= s.epoch_from || s.length_from < 1 || s.length_to < s.length_from {
                return bad("rollout_length_schedule must be increasing".into());
            }
        }
        if !(self.sac.discount_gamma >= 0.0 && self.sac.discount_gamma < 1.0) {
            return bad(format!(
                "discount_gamma must be in [0, 1), got {}",
                self.sac.discount_gamma
            ));
        }
        if !(self.sac.tau > 0.0 && self.sac.tau <= 1.0) {
            return bad("tau must be in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.sac.env_data_fraction) {
            return bad("env_data_fraction must be in [0, 1]".into());
        }
        if self.sac.batch_size < 1 || self.model.batch_size < 1 {
            return bad("batch sizes must be >= 1".into());
        }
        if self.model.pnns_per_pe < 2 {
            return bad("pnns_per_pe must be >= 2".into());
        }
        if !(0.0 < self.model.holdout_fraction && self.model.holdout_fraction < 1.0) {
            return bad("holdout_fraction must be in (0, 1)".into());
        }
        if self.model.logvar_min_init >= self.model.logvar_max_init {
            return bad("logvar_min_init must lie below logvar_max_init".into());
        }
        if self.pendulum.episode_limit < 1 {
            return bad("episode_limit must be >= 1".into());
        }
        if self.pendulum.action_noise_sigma < 0.0 {
            return bad("action_noise_sigma must be non-negative".into());
        }
        if self.pendulum.torque_limit <= 0.0 {
            return bad("torque_limit must be positive".into());
        }
        if self.pendulum.start_angle_range[0] >= self.pendulum.start_angle_range[1]
            || self.pendulum.start_velocity_range[0] >= self.pendulum.start_velocity_range[1]
        {
            return bad("start ranges must be non-empty intervals".into());
        }
        if self.pink_beta <= 0.0 {
            return bad("pink_beta must be positive".into());
        }
        if self.env_buffer_capacity < 1 {
            return bad("env_buffer_capacity must be >= 1".into());
        }
        Ok(())
    }

    pub fn model_activation(&self) -> Activation {
        Activation::Silu
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates_and_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.rollout.rollouts_per_round, 128);
        assert_eq!(back.model.pnns_per_pe, 5);
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.rollout.quantile_factor_zeta = 1.5;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.sac.discount_gamma = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.model.pnns_per_pe = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = toml::from_str::<RunConfig>("steps_per_epcoh = 5").unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn linear_schedule_matches_hand_values() {
        // 1 -> 5 over epochs 2 -> 10 gives {1, 1, 2, 2, 3, 3, 4, 4, 5, 5}.
        let s = RolloutLengthSchedule {
            length_from: 1,
            length_to: 5,
            epoch_from: 2,
            epoch_to: 10,
        };
        let got: Vec<usize> = (1..=10).map(|e| s.length_at(e)).collect();
        assert_eq!(got, vec![1, 1, 2, 2, 3, 3, 4, 4, 5, 5]);
        assert_eq!(s.length_at(50), 5);
    }
}

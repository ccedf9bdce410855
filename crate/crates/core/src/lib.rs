//! Desk-scale Dyna-style model-based reinforcement learning with
//! uncertainty-aware rollout adaption.
//!
//! The crate provides:
//! - closed-form divergences on diagonal Gaussians and ensemble-disagreement
//!   uncertainty measures ([`gaussian`]),
//! - a probabilistic-ensemble dynamics model trained by Gaussian NLL
//!   ([`model`]),
//! - a soft actor-critic learner ([`sac`]),
//! - colored exploration noise ([`noise`]),
//! - a stochastic pendulum benchmark with a feedback-linearization
//!   controller ([`env`]),
//! - replay buffers and the branched-rollout schedulers ([`rollout`]),
//! - a self-describing binary checkpoint container ([`checkpoint`]).
//!
//! All numerics are generic over the [`Scalar`] type; `f32` is the fast
//! training configuration, `f64` the high-precision one used by the
//! verification suites. Concrete aliases for both live at the crate root.

pub mod buffer;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod gaussian;
pub mod model;
pub mod nn;
pub mod noise;
pub mod rollout;
pub mod sac;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DiagGaussian32 = gaussian::DiagGaussian<f32>;
pub type DiagGaussian64 = gaussian::DiagGaussian<f64>;
pub type EnsemblePrediction32 = gaussian::EnsemblePrediction<f32>;
pub type EnsemblePrediction64 = gaussian::EnsemblePrediction<f64>;
pub type EnsembleModel32 = model::EnsembleModel<f32>;
pub type EnsembleModel64 = model::EnsembleModel<f64>;
pub type SacAgent32 = sac::AgentParams<f32>;
pub type SacAgent64 = sac::AgentParams<f64>;
pub type ReplayBuffer32 = buffer::ReplayBuffer<f32>;
pub type ReplayBuffer64 = buffer::ReplayBuffer<f64>;
pub type PendulumEnv32 = env::PendulumEnv<f32>;
pub type PendulumEnv64 = env::PendulumEnv<f64>;

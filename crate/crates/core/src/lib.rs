//! A reward-free agent whose policy reads a fast perceptual latent and a
//! slowly damped global latent, trained online from its own one-step
//! prediction error in a three-zone noisy grid-world.
//!
//! Modules, bottom-up:
//!
//! - [`diff`]: reverse-mode tape, Adam with global-norm clipping, gradient checker
//! - [`env`]: the grid-world, noise regimes and the switching schedule
//! - [`agent`]: encoder, damped recurrent global latent, decoder, policy, losses
//! - [`trainer`]: online training and regime-switch testing loops, logs
//! - [`analysis`]: projection scores, switch-aligned quantile bands, hysteresis statistics

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agent;
pub mod analysis;
pub mod diff;
pub mod env;
pub mod error;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use agent::{ActorSign, Agent, AgentConfig, LossBundle};
pub use analysis::{HysteresisSummary, QuantileBand, ReferenceDirection};
pub use diff::{Graph, ParameterStore};
pub use env::{Action, GridWorld, Regime, RegimeSchedule, Zone};
pub use error::{AnalysisError, ConfigError, DiffError, LogError, QueryError, TrainError};
pub use tensor::Tensor;
pub use trainer::{StepRecord, TrainConfig, TrajectoryLog};

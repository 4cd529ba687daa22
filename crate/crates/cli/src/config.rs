//! Run configuration as a sectioned TOML document.
//!
//! ```toml
//! [agent]
//! damping = 0.1
//!
//! [train]
//! episodes = 200
//! seeds = [0, 1, 2, 3, 4]
//!
//! [schedule]
//! period = 40
//!
//! [output]
//! dir = "runs"
//! plots = true
//! ```
//!
//! Every key is optional and unknown keys are rejected.

use std::path::{Path, PathBuf};

use perspective_core::env::EnvConfig;
use perspective_core::trainer::ExperimentConfig;
use perspective_core::{AgentConfig, RegimeSchedule, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub plots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            plots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub agent: AgentConfig,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub schedule: RegimeSchedule,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Reduced training scale for smoke runs: 40 episodes of 120 steps
    /// (4,800 steps, a tenth of the default) with the actor warm-up kept at a
    /// quarter of training. Test schedule and architecture are unchanged.
    pub fn quick() -> Self {
        let mut c = Self::default();
        c.make_quick();
        c
    }

    pub fn make_quick(&mut self) {
        self.train.episodes = 40;
        self.train.steps_per_episode = 120;
        self.train.warmup_actor_steps = 1_200;
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        config.experiment().validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            agent: self.agent.clone(),
            env: self.env.clone(),
            train: self.train.clone(),
            schedule: self.schedule,
        }
    }
}

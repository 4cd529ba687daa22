use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig};
use crate::diff::NamedTensor;
use crate::error::TrainError;
use crate::trainer::BaselineState;

pub const CHECKPOINT_FORMAT: &str = "perspective-checkpoint/1";

/// Trained weights with Adam moments and the cost baseline, as JSON.
///
/// ```json
/// { "format": "perspective-checkpoint/1", "seed": 0, "config_hash": "…",
///   "agent": { …AgentConfig… }, "optimizer_step": 48000,
///   "baseline": { "mean": …, "var": …, "initialized": true, "config": {…} },
///   "tensors": [ { "name": "encoder.hidden.weight", "shape": [32, 13],
///                  "values": [...], "adam_m": [...], "adam_v": [...] }, … ] }
/// ```
///
/// `values` are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub seed: u64,
    pub config_hash: String,
    pub agent: AgentConfig,
    pub optimizer_step: u64,
    pub baseline: BaselineState,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(agent: &Agent, baseline: &BaselineState, seed: u64, config_hash: String) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            seed,
            config_hash,
            agent: agent.config().clone(),
            optimizer_step: agent.store().step_count(),
            baseline: *baseline,
            tensors: agent.to_named(),
        }
    }

    pub fn restore(&self) -> Result<(Agent, BaselineState), TrainError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(TrainError::Checkpoint(format!(
                "unsupported format `{}`",
                self.format
            )));
        }
        // Initial values are overwritten by the load below.
        let mut agent = Agent::new(self.agent.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        agent
            .load_named(&self.tensors, self.optimizer_step)
            .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        Ok((agent, self.baseline))
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<(), TrainError> {
        serde_json::to_writer(writer, self).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self, TrainError> {
        serde_json::from_reader(reader).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }
}

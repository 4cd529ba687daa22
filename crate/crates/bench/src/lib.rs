//! Fixtures shared by the benchmarks.

use perspective_core::env::{RegimeSchedule, ACTION_COUNT, OBS_DIM};
use perspective_core::trainer::{Phase, StepRecord};
use perspective_core::{Agent, AgentConfig, TrajectoryLog};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct StepInputs {
    pub x: Vec<f64>,
    pub p_prev: Vec<f64>,
    pub g_prev: Vec<f64>,
    pub x_next: Vec<f64>,
}

pub fn default_agent(seed: u64) -> Agent {
    Agent::new(AgentConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

pub fn step_inputs(seed: u64, g_dim: usize) -> StepInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p_prev = vec![0.0; ACTION_COUNT];
    p_prev[4] = 1.0;
    StepInputs {
        x: (0..OBS_DIM).map(|_| rng.random_range(-1.0..1.0)).collect(),
        p_prev,
        g_prev: (0..g_dim).map(|_| rng.random_range(-0.5..0.5)).collect(),
        x_next: (0..OBS_DIM).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

/// Random test-phase logs following `schedule`, one per seed.
pub fn synthetic_test_logs(
    seeds: u64,
    schedule: &RegimeSchedule,
    g_dim: usize,
) -> Vec<TrajectoryLog> {
    (0..seeds)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let records = (0..schedule.total_steps())
                .map(|t| {
                    let regime = schedule.regime_at(t).unwrap();
                    let shift = if regime.label() == 'B' { 0.5 } else { -0.5 };
                    StepRecord {
                        t,
                        phase: Phase::Test,
                        regime,
                        entropy: rng.random_range(0.0..1.6),
                        g: (0..g_dim)
                            .map(|_| shift + rng.random_range(-1.0..1.0))
                            .collect(),
                        ..StepRecord::blank(g_dim)
                    }
                })
                .collect();
            TrajectoryLog::new(String::new(), seed, Phase::Test, records)
        })
        .collect()
}

//! Fully online training and regime-switch testing.
//!
//! Every environment step runs one forward pass, samples an action, observes
//! the next frame, builds the losses and applies exactly one optimizer
//! update. Episode boundaries reset the world and zero `g`; optimizer state
//! and the cost baseline carry over.

mod checkpoint;
mod log;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{sample_action, Agent, AgentConfig, LossBundle};
use crate::diff::{AdamConfig, Graph};
use crate::env::{
    Action, EnvConfig, GridWorld, Observation, Regime, RegimeSchedule, Zone, ACTION_COUNT, OBS_DIM,
};
use crate::error::{ConfigError, DiffError, QueryError, TrainError};
use crate::rng::{self, Stream};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use log::{csv_header, Phase, StepRecord, TrajectoryLog, CSV_SCHEMA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub decay: f64,
    pub clip: f64,
    pub eps: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            decay: 0.99,
            clip: 5.0,
            eps: 1e-8,
        }
    }
}

/// Exponential moving mean and variance of the internal cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub mean: f64,
    pub var: f64,
    pub initialized: bool,
    pub config: BaselineConfig,
}

impl BaselineState {
    pub fn new(config: BaselineConfig) -> Self {
        Self {
            mean: 0.0,
            var: 0.0,
            initialized: false,
            config,
        }
    }

    /// Returns `(b_t, adv_t)` with `b_t` the mean before this update and
    /// `adv_t = clip((c_t − b_t)/√(var + ε), ±clip)`, then moves both
    /// moments toward `c_t`. The first call seeds the mean with `c_t`.
    pub fn update(&mut self, cost: f64) -> (f64, f64) {
        if !self.initialized {
            self.mean = cost;
            self.var = 0.0;
            self.initialized = true;
        }
        let BaselineConfig { decay, clip, eps } = self.config;
        let baseline = self.mean;
        let diff = cost - baseline;
        let adv = (diff / (self.var + eps).sqrt()).clamp(-clip, clip);
        self.mean = decay * self.mean + (1.0 - decay) * cost;
        self.var = decay * self.var + (1.0 - decay) * diff * diff;
        (baseline, adv)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub lr: f64,
    /// Global steps during which the actor term is switched off.
    pub warmup_actor_steps: usize,
    pub clip_norm: f64,
    pub seeds: Vec<u64>,
    /// Steps of backpropagation through `g`; only single-step truncation is supported.
    pub bptt_window: usize,
    pub learn_during_test: bool,
    pub baseline: BaselineConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            steps_per_episode: 240,
            lr: 3e-4,
            warmup_actor_steps: 12_000,
            clip_norm: 1.0,
            seeds: vec![0, 1, 2, 3, 4],
            bptt_window: 1,
            learn_during_test: true,
            baseline: BaselineConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.episodes * self.steps_per_episode
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.episodes == 0 {
            return Err(ConfigError::invalid("train.episodes", "must be >= 1"));
        }
        if self.steps_per_episode == 0 {
            return Err(ConfigError::invalid(
                "train.steps_per_episode",
                "must be >= 1",
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(ConfigError::invalid("train.lr", "must be finite and > 0"));
        }
        if self.warmup_actor_steps > self.total_steps() {
            return Err(ConfigError::invalid(
                "train.warmup_actor_steps",
                "must not exceed episodes * steps_per_episode",
            ));
        }
        if !(self.clip_norm > 0.0) {
            return Err(ConfigError::invalid("train.clip_norm", "must be > 0"));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::invalid(
                "train.seeds",
                "need at least one seed",
            ));
        }
        if self.bptt_window != 1 {
            return Err(ConfigError::invalid(
                "train.bptt_window",
                "only single-step truncation (1) is implemented",
            ));
        }
        let b = &self.baseline;
        if !(b.decay > 0.0 && b.decay < 1.0) {
            return Err(ConfigError::invalid(
                "train.baseline.decay",
                "must lie in (0, 1)",
            ));
        }
        if !(b.clip > 0.0) {
            return Err(ConfigError::invalid("train.baseline.clip", "must be > 0"));
        }
        if !(b.eps > 0.0) {
            return Err(ConfigError::invalid("train.baseline.eps", "must be > 0"));
        }
        Ok(())
    }
}

/// Everything that determines a run apart from its seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub agent: AgentConfig,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub schedule: RegimeSchedule,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.agent.validate()?;
        if self.agent.obs_dim != OBS_DIM {
            return Err(ConfigError::invalid(
                "agent.obs_dim",
                format!("the environment emits {OBS_DIM} channels"),
            ));
        }
        if self.agent.action_count != ACTION_COUNT {
            return Err(ConfigError::invalid(
                "agent.action_count",
                format!("the environment has {ACTION_COUNT} actions"),
            ));
        }
        self.env.validate()?;
        self.train.validate()?;
        self.schedule.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

pub struct TrainOutput {
    pub agent: Agent,
    pub baseline: BaselineState,
    pub log: TrajectoryLog,
}

pub struct TestOutput {
    pub agent: Agent,
    pub log: TrajectoryLog,
}

/// Per-run mutable state threaded through consecutive steps.
struct Rollout<R> {
    env: GridWorld,
    action_rng: R,
    x: Observation,
    p_prev: [f64; ACTION_COUNT],
    g_prev: Vec<f64>,
}

struct StepContext {
    t: usize,
    episode: usize,
    phase: Phase,
    regime: Regime,
    actor_weight: f64,
    learn: bool,
}

impl<R: rand::Rng> Rollout<R> {
    fn new(env: GridWorld, action_rng: R, g_dim: usize) -> Self {
        Self {
            env,
            action_rng,
            x: [0.0; OBS_DIM],
            p_prev: Action::Stay.one_hot(),
            g_prev: vec![0.0; g_dim],
        }
    }

    /// Episode start: world reset, `g ← 0`, efference copy set to `stay`.
    fn begin_episode(&mut self, env_seed: u64) {
        self.x = self.env.reset(env_seed);
        self.p_prev = Action::Stay.one_hot();
        self.g_prev.iter_mut().for_each(|v| *v = 0.0);
    }

    fn step(
        &mut self,
        agent: &mut Agent,
        baseline: &mut BaselineState,
        train: &TrainConfig,
        ctx: StepContext,
    ) -> Result<StepRecord, DiffError> {
        let position = self.env.position();
        let zone = self.env.zone();

        let mut graph = Graph::new();
        let fwd = agent.forward(&mut graph, &self.x, &self.p_prev, &self.g_prev)?;
        let pi = graph.value(fwd.pi).values().to_vec();
        let action_index = sample_action(&pi, &mut self.action_rng);
        let action = Action::from_index(action_index).unwrap_or(Action::Stay);
        let x_next = self.env.step(action);

        let (nodes, losses) = agent.compute_losses(
            &mut graph,
            &fwd,
            action_index,
            &x_next,
            ctx.actor_weight,
            |c| baseline.update(c),
        )?;
        check_losses(&losses)?;
        let g = graph.value(fwd.g).values().to_vec();

        if ctx.learn {
            let store = agent.store_mut();
            graph.backward(nodes.total, store)?;
            store.adam_step(&train.adam, train.lr, train.clip_norm)?;
        }
        drop(graph);

        let record = StepRecord {
            t: ctx.t,
            episode: ctx.episode,
            phase: ctx.phase,
            regime: ctx.regime,
            zone,
            col: position.col,
            row: position.row,
            action,
            l_pred: losses.l_pred,
            l_smooth: losses.l_smooth,
            l_actor: losses.l_actor,
            entropy: losses.entropy,
            l_total: losses.l_total,
            cost: losses.cost,
            baseline: losses.baseline,
            g: g.clone(),
        };
        self.x = x_next;
        self.p_prev = action.one_hot();
        self.g_prev = g;
        Ok(record)
    }
}

fn check_losses(l: &LossBundle) -> Result<(), DiffError> {
    let all = [
        l.l_pred,
        l.l_smooth,
        l.cost,
        l.baseline,
        l.advantage,
        l.l_actor,
        l.entropy,
        l.l_total,
    ];
    if all.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DiffError::NonFinite { op: "loss" })
    }
}

/// Trains a fresh agent online for `episodes × steps_per_episode` steps.
pub fn train_run(config: &ExperimentConfig, seed: u64) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    let train = &config.train;
    let mut init_rng = rng::stream(seed, Stream::Init);
    let mut agent = Agent::new(config.agent.clone(), &mut init_rng)?;
    let mut baseline = BaselineState::new(train.baseline);

    let mut env = GridWorld::new(config.env.clone(), seed);
    env.set_regime(Regime::A);
    let mut rollout = Rollout::new(
        env,
        rng::stream(seed, Stream::TrainAction),
        config.agent.g_dim,
    );

    let mut records = Vec::with_capacity(train.total_steps());
    let mut t = 0;
    for episode in 0..train.episodes {
        rollout.begin_episode(rng::derive(seed, Stream::TrainEnv, episode as u64));
        for _ in 0..train.steps_per_episode {
            let ctx = StepContext {
                t,
                episode,
                phase: Phase::Train,
                regime: Regime::A,
                actor_weight: if t < train.warmup_actor_steps {
                    0.0
                } else {
                    1.0
                },
                learn: true,
            };
            let record = rollout
                .step(&mut agent, &mut baseline, train, ctx)
                .map_err(|source| TrainError::Numeric { step: t, source })?;
            records.push(record);
            t += 1;
        }
    }
    let log = TrajectoryLog::new(config.hash(), seed, Phase::Train, records);
    Ok(TrainOutput {
        agent,
        baseline,
        log,
    })
}

/// One continuous episode under `schedule`, starting from trained weights.
/// Learning stays on unless `learn` is false.
pub fn test_run(
    config: &ExperimentConfig,
    checkpoint: &Checkpoint,
    schedule: &RegimeSchedule,
    seed: u64,
    learn: bool,
) -> Result<TestOutput, TrainError> {
    config.validate()?;
    schedule.validate()?;
    let (mut agent, mut baseline) = checkpoint.restore()?;
    let env = GridWorld::new(config.env.clone(), seed);
    let mut rollout = Rollout::new(
        env,
        rng::stream(seed, Stream::TestAction),
        agent.config().g_dim,
    );
    rollout.begin_episode(rng::derive(seed, Stream::TestEnv, 0));

    let total = schedule.total_steps();
    let mut records = Vec::with_capacity(total);
    for t in 0..total {
        let regime = schedule
            .regime_at(t)
            .expect("t is below the schedule length");
        rollout.env.set_regime(regime);
        let ctx = StepContext {
            t,
            episode: 0,
            phase: Phase::Test,
            regime,
            actor_weight: 1.0,
            learn,
        };
        let record = rollout
            .step(&mut agent, &mut baseline, &config.train, ctx)
            .map_err(|source| TrainError::Numeric { step: t, source })?;
        records.push(record);
    }
    let log = TrajectoryLog::new(config.hash(), seed, Phase::Test, records);
    Ok(TestOutput { agent, log })
}

/// Fraction of steps spent in each zone over `episodes`.
pub fn occupancy_stats(
    log: &TrajectoryLog,
    episodes: Range<usize>,
) -> Result<[f64; 3], QueryError> {
    let mut counts = [0usize; 3];
    for r in log.records.iter().filter(|r| episodes.contains(&r.episode)) {
        counts[r.zone.index()] += 1;
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(QueryError::EmptyRange {
            start: episodes.start,
            end: episodes.end,
        });
    }
    Ok(counts.map(|c| c as f64 / n as f64))
}

/// Largest-occupancy zone, ties resolved toward the lower index.
pub fn dominant_zone(fractions: &[f64; 3]) -> Zone {
    let mut best = 0;
    for i in 1..3 {
        if fractions[i] > fractions[best] {
            best = i;
        }
    }
    Zone::from_index(best).unwrap_or(Zone::Z0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Position;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.agent.z_dim = 4;
        c.agent.g_dim = 4;
        c.agent.encoder_hidden = 6;
        c.agent.decoder_hidden = 6;
        c.agent.policy_hidden = 6;
        c.train.episodes = 3;
        c.train.steps_per_episode = 40;
        c.train.warmup_actor_steps = 60;
        c.train.seeds = vec![9];
        c
    }

    #[test]
    fn baseline_first_step_has_zero_advantage() {
        let mut b = BaselineState::new(BaselineConfig::default());
        let (base, adv) = b.update(0.37);
        assert_eq!(base, 0.37);
        assert_eq!(adv, 0.0);
    }

    #[test]
    fn baseline_converges_on_constant_stream() {
        let mut b = BaselineState::new(BaselineConfig::default());
        b.update(1.0);
        b.update(2.0);
        let mut last = f64::INFINITY;
        for _ in 0..5_000 {
            last = b.update(1.5).1;
        }
        assert!(last.abs() < 1e-6, "{last}");
        assert!(b.var >= 0.0);
    }

    #[test]
    fn baseline_spike_is_clipped() {
        let mut b = BaselineState::new(BaselineConfig::default());
        let mut x = 0u64;
        for _ in 0..2_000 {
            // small deterministic jitter
            x = rng::mix(x);
            b.update(1.0 + (x % 100) as f64 * 1e-3);
        }
        let sd = b.var.sqrt();
        let (_, adv) = b.update(b.mean + 100.0 * sd);
        assert_eq!(adv, 5.0);
        let (_, adv) = b.update(-1e6);
        assert_eq!(adv, -5.0);
    }

    #[test]
    fn default_totals() {
        let t = TrainConfig::default();
        assert_eq!(t.total_steps(), 48_000);
        assert!(t.warmup_actor_steps <= t.total_steps());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn invalid_config_names_key() {
        let mut c = ExperimentConfig::default();
        c.train.warmup_actor_steps = 1_000_000;
        assert_eq!(c.validate().unwrap_err().key(), "train.warmup_actor_steps");
        let mut c = ExperimentConfig::default();
        c.train.bptt_window = 2;
        assert_eq!(c.validate().unwrap_err().key(), "train.bptt_window");
        let mut c = ExperimentConfig::default();
        c.agent.obs_dim = 7;
        assert_eq!(c.validate().unwrap_err().key(), "agent.obs_dim");
    }

    #[test]
    fn train_is_deterministic_and_contiguous() {
        let cfg = tiny();
        let a = train_run(&cfg, 9).unwrap();
        let b = train_run(&cfg, 9).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.records.len(), 120);
        for (i, r) in a.log.records.iter().enumerate() {
            assert_eq!(r.t, i);
            assert_eq!(r.episode, i / 40);
        }
        assert_eq!(a.agent.store().step_count(), 120);
        // every episode restarts at the center
        for r in a.log.records.iter().step_by(40) {
            assert_eq!((r.col, r.row), (7, 4));
        }
    }

    #[test]
    fn test_run_follows_schedule() {
        let cfg = tiny();
        let trained = train_run(&cfg, 9).unwrap();
        let ckpt = Checkpoint::new(&trained.agent, &trained.baseline, 9, cfg.hash());
        let sched = RegimeSchedule::default();
        let out = test_run(&cfg, &ckpt, &sched, 9, true).unwrap();
        assert_eq!(out.log.records.len(), 700);
        assert!(out.log.records[..150].iter().all(|r| r.regime == Regime::A));
        for r in &out.log.records {
            assert_eq!(r.regime, sched.regime_at(r.t).unwrap());
        }
        let frozen = test_run(&cfg, &ckpt, &sched, 9, false).unwrap();
        assert_eq!(frozen.agent.to_named(), trained.agent.to_named());
    }

    #[test]
    fn occupancy_cases() {
        let rec = |episode, col| StepRecord {
            col,
            episode,
            zone: EnvConfig::default().zone_of(Position { col, row: 0 }),
            ..StepRecord::blank(4)
        };
        let pinned = TrajectoryLog::new(String::new(), 0, Phase::Train, vec![rec(0, 7); 10]);
        assert_eq!(occupancy_stats(&pinned, 0..1).unwrap(), [0.0, 1.0, 0.0]);
        let mixed: Vec<_> = (0..30).map(|i| rec(0, [2, 7, 12][i % 3])).collect();
        let mixed = TrajectoryLog::new(String::new(), 0, Phase::Train, mixed);
        let f = occupancy_stats(&mixed, 0..1).unwrap();
        for v in f {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(occupancy_stats(&mixed, 5..6).is_err());
    }
}

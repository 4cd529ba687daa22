//! Three-zone grid-world with zone-dependent Gaussian observation noise,
//! the two noise regimes, and the regime-switching schedule.

use std::f64::consts::PI;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, QueryError};

pub const OBS_DIM: usize = 8;
pub const ACTION_COUNT: usize = 5;

pub type Observation = [f64; OBS_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Zone {
    Z0,
    Z1,
    Z2,
}

impl Zone {
    pub const ALL: [Zone; 3] = [Zone::Z0, Zone::Z1, Zone::Z2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Zone> {
        Zone::ALL.get(i).copied()
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Z{}", self.index())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub const ALL: [Action; ACTION_COUNT] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stay,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn one_hot(self) -> [f64; ACTION_COUNT] {
        let mut p = [0.0; ACTION_COUNT];
        p[self.index()] = 1.0;
        p
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Stay => "stay",
        }
    }

    pub fn from_name(name: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.name() == name)
    }

    fn delta(self) -> (i64, i64) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Position {
    pub col: usize,
    pub row: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    A,
    B,
}

impl Regime {
    pub fn label(self) -> char {
        match self {
            Regime::A => 'A',
            Regime::B => 'B',
        }
    }

    pub fn from_label(c: &str) -> Option<Regime> {
        match c {
            "A" => Some(Regime::A),
            "B" => Some(Regime::B),
            _ => None,
        }
    }

    pub fn other(self) -> Regime {
        match self {
            Regime::A => Regime::B,
            Regime::B => Regime::A,
        }
    }
}

/// Grid geometry and the per-regime noise tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Columns per zone; the grid is three zones wide.
    pub zone_width: usize,
    pub height: usize,
    /// σ for (Z0, Z1, Z2) under regime A.
    pub sigma_a: [f64; 3],
    /// σ for (Z0, Z1, Z2) under regime B.
    pub sigma_b: [f64; 3],
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            zone_width: 5,
            height: 9,
            sigma_a: [0.60, 0.30, 0.05],
            sigma_b: [0.05, 0.30, 0.60],
        }
    }
}

impl EnvConfig {
    pub fn width(&self) -> usize {
        3 * self.zone_width
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.zone_width < 1 {
            return Err(ConfigError::invalid("env.zone_width", "must be >= 1"));
        }
        if self.height < 2 {
            return Err(ConfigError::invalid("env.height", "must be >= 2"));
        }
        if self.sigma_a.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(ConfigError::invalid(
                "env.sigma_a",
                "sigmas must be finite and >= 0",
            ));
        }
        if self.sigma_b.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(ConfigError::invalid(
                "env.sigma_b",
                "sigmas must be finite and >= 0",
            ));
        }
        Ok(())
    }

    pub fn sigmas(&self, regime: Regime) -> [f64; 3] {
        match regime {
            Regime::A => self.sigma_a,
            Regime::B => self.sigma_b,
        }
    }

    pub fn regime_sigma(&self, regime: Regime, zone: Zone) -> f64 {
        self.sigmas(regime)[zone.index()]
    }

    pub fn zone_of(&self, pos: Position) -> Zone {
        Zone::from_index((pos.col / self.zone_width).min(2)).unwrap_or(Zone::Z2)
    }

    /// Middle of the middle band.
    pub fn center(&self) -> Position {
        Position {
            col: self.zone_width + self.zone_width / 2,
            row: self.height / 2,
        }
    }

    /// Noise-free observation:
    /// `[col/(W−1), row/(H−1), onehot(zone)×3, sin(2π·col/W), sin(2π·row/H), 1]`.
    pub fn base_observation(&self, pos: Position) -> Observation {
        let w = self.width() as f64;
        let h = self.height as f64;
        let col = pos.col as f64;
        let row = pos.row as f64;
        let mut x = [0.0; OBS_DIM];
        x[0] = col / (w - 1.0);
        x[1] = row / (h - 1.0);
        x[2 + self.zone_of(pos).index()] = 1.0;
        x[5] = (2.0 * PI * col / w).sin();
        x[6] = (2.0 * PI * row / h).sin();
        x[7] = 1.0;
        x
    }
}

/// σ for one zone under the default noise tables.
pub fn regime_sigma(regime: Regime, zone: Zone) -> f64 {
    EnvConfig::default().regime_sigma(regime, zone)
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    config: EnvConfig,
    sigma: [f64; 3],
    position: Position,
    rng: ChaCha8Rng,
}

impl GridWorld {
    /// A world using the regime-A noise table, agent at the center.
    pub fn new(config: EnvConfig, seed: u64) -> Self {
        let sigma = config.sigma_a;
        let position = config.center();
        Self {
            config,
            sigma,
            position,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn position(&self) -> Position {
        self.position
    }

    pub fn zone(&self) -> Zone {
        self.config.zone_of(self.position)
    }

    pub fn sigma(&self) -> [f64; 3] {
        self.sigma
    }

    pub fn set_sigma(&mut self, sigma: [f64; 3]) {
        debug_assert!(sigma.iter().all(|s| *s >= 0.0));
        self.sigma = sigma;
    }

    pub fn set_regime(&mut self, regime: Regime) {
        self.sigma = self.config.sigmas(regime);
    }

    /// Moves the agent to the center, reseeds the noise and observes.
    pub fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.position = self.config.center();
        self.observe()
    }

    /// Unit move clamped at the walls, then a noisy observation.
    pub fn step(&mut self, action: Action) -> Observation {
        let (dc, dr) = action.delta();
        let max_col = self.config.width() as i64 - 1;
        let max_row = self.config.height as i64 - 1;
        self.position = Position {
            col: (self.position.col as i64 + dc).clamp(0, max_col) as usize,
            row: (self.position.row as i64 + dr).clamp(0, max_row) as usize,
        };
        self.observe()
    }

    fn observe(&mut self) -> Observation {
        let sigma = self.sigma[self.zone().index()];
        let mut x = self.config.base_observation(self.position);
        // Draw every channel regardless of σ so the stream does not depend on it.
        for v in &mut x {
            let n: f64 = StandardNormal.sample(&mut self.rng);
            *v += sigma * n;
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SwitchDirection {
    AtoB,
    BtoA,
}

impl SwitchDirection {
    pub fn label(self) -> &'static str {
        match self {
            SwitchDirection::AtoB => "A->B",
            SwitchDirection::BtoA => "B->A",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "A->B" => Some(SwitchDirection::AtoB),
            "B->A" => Some(SwitchDirection::BtoA),
            _ => None,
        }
    }

    pub fn to_regime(self) -> Regime {
        match self {
            SwitchDirection::AtoB => Regime::B,
            SwitchDirection::BtoA => Regime::A,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwitchEvent {
    /// First step run under the new regime.
    pub time: usize,
    pub direction: SwitchDirection,
}

/// Warm-up in regime A followed by a phase that toggles A/B every `period` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeSchedule {
    pub warmup_steps: usize,
    pub test_steps: usize,
    pub period: usize,
}

impl Default for RegimeSchedule {
    fn default() -> Self {
        Self {
            warmup_steps: 150,
            test_steps: 550,
            period: 40,
        }
    }
}

impl RegimeSchedule {
    pub fn with_period(period: usize) -> Self {
        Self {
            period,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.period == 0 {
            return Err(ConfigError::invalid("schedule.period", "must be >= 1"));
        }
        if self.test_steps == 0 {
            return Err(ConfigError::invalid("schedule.test_steps", "must be >= 1"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.warmup_steps + self.test_steps
    }

    /// A before the warm-up ends; afterwards B, A, B, … flipping every `period` steps.
    pub fn regime_at(&self, t: usize) -> Result<Regime, QueryError> {
        let total = self.total_steps();
        if t >= total {
            return Err(QueryError::StepOutOfRange { t, total });
        }
        if t < self.warmup_steps {
            return Ok(Regime::A);
        }
        let k = (t - self.warmup_steps) / self.period;
        Ok(if k.is_multiple_of(2) {
            Regime::B
        } else {
            Regime::A
        })
    }

    pub fn switch_times(&self) -> Vec<usize> {
        (self.warmup_steps..self.total_steps())
            .step_by(self.period)
            .collect()
    }

    pub fn switch_events(&self) -> Vec<SwitchEvent> {
        self.switch_times()
            .into_iter()
            .enumerate()
            .map(|(k, time)| SwitchEvent {
                time,
                direction: if k % 2 == 0 {
                    SwitchDirection::AtoB
                } else {
                    SwitchDirection::BtoA
                },
            })
            .collect()
    }
}

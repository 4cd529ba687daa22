//! Switch-aligned hysteresis measurements on test-phase logs.
//!
//! Two scalar signals are extracted per step: the projection of `g_t` onto
//! the A→B reference axis and the within-run z-scored policy entropy. Each
//! is cut into windows of `P` steps starting at every switch of a given
//! direction, reduced to a per-run median over events, and then to a
//! cross-seed median with an interquartile band.
//!
//! Fixed conventions: percentiles interpolate linearly between order
//! statistics (`pos = q·(n−1)`), and z-scores use the population σ.

use serde::{Deserialize, Serialize};

use crate::env::{Regime, RegimeSchedule, SwitchDirection};
use crate::error::AnalysisError;
use crate::trainer::TrajectoryLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDirection {
    /// Unit vector along `mean_b − mean_a`.
    pub unit: Vec<f64>,
    pub mean_a: Vec<f64>,
    pub mean_b: Vec<f64>,
}

/// Which steps feed the regime means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DirectionOptions {
    /// Skip this many steps after every switch.
    pub exclude_first_k_after_switch: usize,
}

/// Mean `g` under each regime, pooled over every step of every log, and the
/// normalized difference B − A.
pub fn reference_direction(
    logs: &[&TrajectoryLog],
    schedule: &RegimeSchedule,
    options: DirectionOptions,
) -> Result<ReferenceDirection, AnalysisError> {
    let dim = logs.first().map_or(0, |l| l.g_dim());
    let switches = schedule.switch_times();
    let excluded = |t: usize| {
        options.exclude_first_k_after_switch > 0
            && switches
                .iter()
                .any(|&s| t >= s && t < s + options.exclude_first_k_after_switch)
    };
    let mut sum_a = vec![0.0; dim];
    let mut sum_b = vec![0.0; dim];
    let (mut n_a, mut n_b) = (0usize, 0usize);
    for log in logs {
        for r in &log.records {
            if r.g.len() != dim {
                return Err(AnalysisError::DimensionMismatch(dim, r.g.len()));
            }
            if excluded(r.t) {
                continue;
            }
            let (sum, n) = match r.regime {
                Regime::A => (&mut sum_a, &mut n_a),
                Regime::B => (&mut sum_b, &mut n_b),
            };
            for (s, v) in sum.iter_mut().zip(&r.g) {
                *s += v;
            }
            *n += 1;
        }
    }
    if n_a == 0 {
        return Err(AnalysisError::MissingRegime('A'));
    }
    if n_b == 0 {
        return Err(AnalysisError::MissingRegime('B'));
    }
    let mean_a: Vec<f64> = sum_a.iter().map(|s| s / n_a as f64).collect();
    let mean_b: Vec<f64> = sum_b.iter().map(|s| s / n_b as f64).collect();
    let diff: Vec<f64> = mean_b.iter().zip(&mean_a).map(|(b, a)| b - a).collect();
    let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(AnalysisError::DegenerateDirection);
    }
    Ok(ReferenceDirection {
        unit: diff.iter().map(|d| d / norm).collect(),
        mean_a,
        mean_b,
    })
}

pub fn g_score(g: &[f64], unit: &[f64]) -> f64 {
    g.iter().zip(unit).map(|(a, b)| a * b).sum()
}

pub fn g_score_series(log: &TrajectoryLog, direction: &ReferenceDirection) -> Vec<f64> {
    log.records
        .iter()
        .map(|r| g_score(&r.g, &direction.unit))
        .collect()
}

/// `(H_t − μ)/σ` with μ and population σ taken over the whole series.
pub fn entropy_z(series: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    if series.len() < 2 {
        return Err(AnalysisError::TooShort {
            need: 2,
            got: series.len(),
        });
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok(series.iter().map(|v| (v - mean) / sd).collect())
}

/// Per-event windows for one run and one switch direction.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedEvents {
    pub direction: SwitchDirection,
    pub period: usize,
    /// Absolute switch step of each kept row.
    pub starts: Vec<usize>,
    /// `rows[e][τ] = series[starts[e] + τ]`, τ ∈ 0..period.
    pub rows: Vec<Vec<f64>>,
    /// Events of this direction found in the schedule, kept or not.
    pub total_events: usize,
    /// Events whose window ran past the end of the series.
    pub dropped: usize,
}

/// Cuts `series` (indexed by absolute step) into windows of `period` steps
/// starting at each switch of `direction`.
pub fn align_switches(
    series: &[f64],
    schedule: &RegimeSchedule,
    direction: SwitchDirection,
) -> Result<AlignedEvents, AnalysisError> {
    let period = schedule.period;
    let end = series.len().min(schedule.total_steps());
    let mut out = AlignedEvents {
        direction,
        period,
        starts: Vec::new(),
        rows: Vec::new(),
        total_events: 0,
        dropped: 0,
    };
    for event in schedule
        .switch_events()
        .into_iter()
        .filter(|e| e.direction == direction)
    {
        out.total_events += 1;
        if event.time + period > end {
            out.dropped += 1;
            continue;
        }
        out.starts.push(event.time);
        out.rows
            .push(series[event.time..event.time + period].to_vec());
    }
    if out.rows.is_empty() {
        return Err(AnalysisError::NoEvents(direction.label()));
    }
    Ok(out)
}

/// Linear-interpolation percentile of `values`, `q ∈ [0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, q)
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 0.5)
}

/// Cross-seed median and IQR of per-run median trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBand {
    pub direction: SwitchDirection,
    pub median: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
    pub run_medians: Vec<Vec<f64>>,
}

/// Stage 1: pointwise median over events within each run. Stage 2:
/// pointwise median, 25th and 75th percentile over the run medians.
/// Runs without events are skipped.
pub fn quantile_trajectories(runs: &[AlignedEvents]) -> Result<QuantileBand, AnalysisError> {
    let used: Vec<&AlignedEvents> = runs.iter().filter(|r| !r.rows.is_empty()).collect();
    let first = used.first().ok_or(AnalysisError::NoEvents("any"))?;
    let (direction, period) = (first.direction, first.period);
    for r in &used {
        if r.period != period {
            return Err(AnalysisError::DimensionMismatch(period, r.period));
        }
    }
    let run_medians: Vec<Vec<f64>> = used
        .iter()
        .map(|run| {
            (0..period)
                .map(|tau| median(&run.rows.iter().map(|row| row[tau]).collect::<Vec<_>>()))
                .collect()
        })
        .collect();
    let mut band = QuantileBand {
        direction,
        median: Vec::with_capacity(period),
        q25: Vec::with_capacity(period),
        q75: Vec::with_capacity(period),
        run_medians,
    };
    for tau in 0..period {
        let mut column: Vec<f64> = band.run_medians.iter().map(|m| m[tau]).collect();
        column.sort_by(f64::total_cmp);
        band.median.push(percentile_sorted(&column, 0.5));
        band.q25.push(percentile_sorted(&column, 0.25));
        band.q75.push(percentile_sorted(&column, 0.75));
    }
    Ok(band)
}

/// Kendall's τ_b between `x` and `y`; 0 when either side is constant.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut ties_x, mut ties_y) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[j] - x[i];
            let dy = y[j] - y[i];
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {}
                (true, false) => ties_x += 1,
                (false, true) => ties_y += 1,
                (false, false) => {
                    if (dx > 0.0) == (dy > 0.0) {
                        concordant += 1;
                    } else {
                        discordant += 1;
                    }
                }
            }
        }
    }
    let denom =
        (((concordant + discordant + ties_x) * (concordant + discordant + ties_y)) as f64).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (concordant - discordant) as f64 / denom
    }
}

/// Kendall τ_b of a trajectory against relative time.
pub fn trend(trajectory: &[f64]) -> f64 {
    let tau: Vec<f64> = (0..trajectory.len()).map(|i| i as f64).collect();
    kendall_tau_b(&tau, trajectory)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HysteresisSummary {
    /// Value at τ = P−1 minus value at τ = 0.
    pub terminal_delta_ab: f64,
    pub terminal_delta_ba: f64,
    /// Kendall τ_b of the trajectory against τ.
    pub trend_ab: f64,
    pub trend_ba: f64,
    /// Mean over τ of |(ab(τ) − ab(0)) + (ba(τ) − ba(0))|; zero iff the two
    /// centered trajectories mirror each other.
    pub asymmetry: f64,
}

pub fn hysteresis_summary(ab: &[f64], ba: &[f64]) -> Result<HysteresisSummary, AnalysisError> {
    if ab.len() != ba.len() {
        return Err(AnalysisError::DimensionMismatch(ab.len(), ba.len()));
    }
    if ab.is_empty() {
        return Err(AnalysisError::TooShort { need: 1, got: 0 });
    }
    let n = ab.len();
    let asymmetry = ab
        .iter()
        .zip(ba)
        .map(|(a, b)| ((a - ab[0]) + (b - ba[0])).abs())
        .sum::<f64>()
        / n as f64;
    Ok(HysteresisSummary {
        terminal_delta_ab: ab[n - 1] - ab[0],
        terminal_delta_ba: ba[n - 1] - ba[0],
        trend_ab: trend(ab),
        trend_ba: trend(ba),
        asymmetry,
    })
}

/// Both directions of one signal across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalReport {
    pub signal: String,
    pub a_to_b: QuantileBand,
    pub b_to_a: QuantileBand,
    pub summary: HysteresisSummary,
    /// Events (kept, dropped) per direction summed over runs.
    pub events_ab: (usize, usize),
    pub events_ba: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HysteresisReport {
    pub period: usize,
    pub seeds: usize,
    pub direction: ReferenceDirection,
    pub g_score: SignalReport,
    pub entropy_z: SignalReport,
}

fn signal_report(
    name: &str,
    series: &[Vec<f64>],
    schedule: &RegimeSchedule,
) -> Result<SignalReport, AnalysisError> {
    let mut per_dir = Vec::new();
    for dir in [SwitchDirection::AtoB, SwitchDirection::BtoA] {
        let aligned = series
            .iter()
            .map(|s| align_switches(s, schedule, dir))
            .collect::<Result<Vec<_>, _>>()?;
        let kept = aligned.iter().map(|a| a.rows.len()).sum();
        let dropped = aligned.iter().map(|a| a.dropped).sum();
        per_dir.push((quantile_trajectories(&aligned)?, (kept, dropped)));
    }
    let (ba, events_ba) = per_dir.pop().expect("two directions");
    let (ab, events_ab) = per_dir.pop().expect("two directions");
    let summary = hysteresis_summary(&ab.median, &ba.median)?;
    Ok(SignalReport {
        signal: name.to_string(),
        a_to_b: ab,
        b_to_a: ba,
        summary,
        events_ab,
        events_ba,
    })
}

/// Full measurement pipeline over test-phase logs, one per seed, using a
/// reference direction pooled over all of them.
pub fn analyze_test_logs(
    logs: &[TrajectoryLog],
    schedule: &RegimeSchedule,
    options: DirectionOptions,
) -> Result<HysteresisReport, AnalysisError> {
    let refs: Vec<&TrajectoryLog> = logs.iter().collect();
    let direction = reference_direction(&refs, schedule, options)?;
    let g_series: Vec<Vec<f64>> = logs.iter().map(|l| g_score_series(l, &direction)).collect();
    let h_series = logs
        .iter()
        .map(|l| entropy_z(&l.records.iter().map(|r| r.entropy).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HysteresisReport {
        period: schedule.period,
        seeds: logs.len(),
        g_score: signal_report("g_score", &g_series, schedule)?,
        entropy_z: signal_report("entropy_z", &h_series, schedule)?,
        direction,
    })
}

//! Pass/fail checks that can be evaluated on pipeline outputs.

use perspective_core::analysis::HysteresisReport;
use perspective_core::env::SwitchDirection;
use perspective_core::RegimeSchedule;

use crate::pipeline::OccupancyTable;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

/// Late seed-median Z2 occupancy beats the early one and every other zone.
pub fn occupancy(table: &OccupancyTable) -> Check {
    let early = table.early_median;
    let late = table.late_median;
    let passed = late[2] > early[2] && late[2] > late[0] && late[2] > late[1];
    Check::new(
        "zone preference (Z2 late)",
        passed,
        format!(
            "median early {:.3} -> late {:.3}; late zones [{:.3}, {:.3}, {:.3}]",
            early[2], late[2], late[0], late[1], late[2]
        ),
    )
}

/// g-score rises after A→B, falls after B→A, with opposite terminal deltas.
pub fn g_hysteresis(report: &HysteresisReport) -> Check {
    let s = report.g_score.summary;
    let passed =
        s.trend_ab > 0.0 && s.trend_ba < 0.0 && s.terminal_delta_ab * s.terminal_delta_ba < 0.0;
    Check::new(
        "g-score directional hysteresis",
        passed,
        format!(
            "trend A->B {:+.3}, B->A {:+.3}; delta A->B {:+.3}, B->A {:+.3}",
            s.trend_ab, s.trend_ba, s.terminal_delta_ab, s.terminal_delta_ba
        ),
    )
}

pub fn entropy_contrast(report: &HysteresisReport) -> Check {
    let h = report.entropy_z.summary.asymmetry;
    let g = report.g_score.summary.asymmetry;
    Check::new(
        "entropy less asymmetric than g",
        h < g,
        format!("asymmetry entropy {h:.4} vs g {g:.4}"),
    )
}

/// Switch events expected per test period.
pub fn expected_switches(period: usize) -> Option<usize> {
    match period {
        20 => Some(27),
        40 => Some(14),
        80 => Some(6),
        _ => None,
    }
}

/// Schedule event list against a scan for regime changes and the expected count.
pub fn schedule(period: usize) -> Check {
    let s = RegimeSchedule::with_period(period);
    let events = s.switch_events();
    let mut scanned = 0;
    let mut prev = None;
    for t in 0..s.total_steps() {
        let r = s.regime_at(t).expect("in range");
        if prev.is_some_and(|p| p != r) {
            scanned += 1;
        }
        prev = Some(r);
    }
    let ab = events
        .iter()
        .filter(|e| e.direction == SwitchDirection::AtoB)
        .count();
    let ba = events.len() - ab;
    let expected = expected_switches(period);
    let passed = events.len() == scanned && expected.is_none_or(|n| n == events.len());
    Check::new(
        format!("switch count P={period}"),
        passed,
        format!(
            "{} events ({ab} A->B, {ba} B->A), scan {scanned}, expected {}",
            events.len(),
            expected.map_or("-".to_string(), |n| n.to_string())
        ),
    )
}

pub fn render_table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for c in checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{tag}  {:<width$}  {}\n", c.name, c.detail));
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    out.push_str(&format!("{passed}/{} checks passed\n", checks.len()));
    out
}

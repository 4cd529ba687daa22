//! Per-step records and their CSV form.
//!
//! Columns: `t,episode,phase,regime,zone,col,row,action,L_pred,L_smooth,
//! L_actor,H,L_total,c,b,g0..g{n−1}`. `zone` is 0–2, `regime` is `A`/`B`,
//! `action` is the lowercase action name. Reals use Rust's shortest
//! round-trip formatting, so writing is deterministic and reading is exact.

use std::io::{Read, Write};

use crate::env::{Action, Regime, Zone};
use crate::error::LogError;

/// Version tag of the CSV layout, recorded in run manifests.
pub const CSV_SCHEMA: &str = "perspective-trajectory-csv/1";

const FIXED_COLUMNS: [&str; 15] = [
    "t", "episode", "phase", "regime", "zone", "col", "row", "action", "L_pred", "L_smooth",
    "L_actor", "H", "L_total", "c", "b",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Train,
    Test,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Test => "test",
        }
    }

    pub fn from_label(s: &str) -> Option<Phase> {
        match s {
            "train" => Some(Phase::Train),
            "test" => Some(Phase::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub episode: usize,
    pub phase: Phase,
    pub regime: Regime,
    pub zone: Zone,
    pub col: usize,
    pub row: usize,
    pub action: Action,
    pub l_pred: f64,
    pub l_smooth: f64,
    pub l_actor: f64,
    pub entropy: f64,
    pub l_total: f64,
    pub cost: f64,
    pub baseline: f64,
    pub g: Vec<f64>,
}

impl StepRecord {
    /// All-zero record, handy for building synthetic logs.
    pub fn blank(g_dim: usize) -> Self {
        Self {
            t: 0,
            episode: 0,
            phase: Phase::Test,
            regime: Regime::A,
            zone: Zone::Z0,
            col: 0,
            row: 0,
            action: Action::Stay,
            l_pred: 0.0,
            l_smooth: 0.0,
            l_actor: 0.0,
            entropy: 0.0,
            l_total: 0.0,
            cost: 0.0,
            baseline: 0.0,
            g: vec![0.0; g_dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub config_hash: String,
    pub seed: u64,
    pub phase: Phase,
    pub records: Vec<StepRecord>,
}

pub fn csv_header(g_dim: usize) -> Vec<String> {
    FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..g_dim).map(|i| format!("g{i}")))
        .collect()
}

impl TrajectoryLog {
    pub fn new(config_hash: String, seed: u64, phase: Phase, records: Vec<StepRecord>) -> Self {
        Self {
            config_hash,
            seed,
            phase,
            records,
        }
    }

    pub fn g_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.g.len())
    }

    pub fn episodes(&self) -> usize {
        self.records.last().map_or(0, |r| r.episode + 1)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), LogError> {
        let mut w = std::io::BufWriter::new(writer);
        writeln!(w, "{}", csv_header(self.g_dim()).join(","))?;
        let mut line = String::with_capacity(512);
        for r in &self.records {
            use std::fmt::Write as _;
            line.clear();
            let _ = write!(
                line,
                "{},{},{},{},{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.t,
                r.episode,
                r.phase.label(),
                r.regime.label(),
                r.zone.index(),
                r.col,
                r.row,
                r.action.name(),
                r.l_pred,
                r.l_smooth,
                r.l_actor,
                r.entropy,
                r.l_total,
                r.cost,
                r.baseline
            );
            for v in &r.g {
                let _ = write!(line, ",{v:?}");
            }
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses a CSV written by [`TrajectoryLog::write_csv`]. Seed and
    /// config hash are not part of the CSV and are left for the caller.
    /// Row numbers in errors count the header as row 1.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, LogError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| LogError::Header(e.to_string()))?
            .clone();
        let g_dim = header.len().saturating_sub(FIXED_COLUMNS.len());
        let expected = csv_header(g_dim);
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(LogError::Header(
                header.iter().collect::<Vec<_>>().join(","),
            ));
        }

        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row_no = i + 2;
            let row = row.map_err(|e| LogError::Malformed {
                row: row_no,
                reason: e.to_string(),
            })?;
            records.push(
                parse_row(&row, g_dim).map_err(|reason| LogError::Malformed {
                    row: row_no,
                    reason,
                })?,
            );
        }
        let phase = records.first().map_or(Phase::Test, |r| r.phase);
        Ok(Self::new(String::new(), 0, phase, records))
    }
}

fn parse_row(row: &csv::StringRecord, g_dim: usize) -> Result<StepRecord, String> {
    let field = |i: usize| {
        row.get(i)
            .ok_or_else(|| format!("missing column {}", i + 1))
    };
    let int = |i: usize| -> Result<usize, String> {
        field(i)?
            .parse()
            .map_err(|_| format!("column `{}` is not an integer", FIXED_COLUMNS[i]))
    };
    let real = |i: usize, name: &str| -> Result<f64, String> {
        let v: f64 = field(i)?
            .parse()
            .map_err(|_| format!("column `{name}` is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("column `{name}` is not finite"))
        }
    };
    let phase = Phase::from_label(field(2)?).ok_or("bad phase")?;
    let regime = Regime::from_label(field(3)?).ok_or("bad regime")?;
    let zone = Zone::from_index(int(4)?).ok_or("bad zone")?;
    let action = Action::from_name(field(7)?).ok_or("bad action")?;
    let g = (0..g_dim)
        .map(|k| real(FIXED_COLUMNS.len() + k, &format!("g{k}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StepRecord {
        t: int(0)?,
        episode: int(1)?,
        phase,
        regime,
        zone,
        col: int(5)?,
        row: int(6)?,
        action,
        l_pred: real(8, "L_pred")?,
        l_smooth: real(9, "L_smooth")?,
        l_actor: real(10, "L_actor")?,
        entropy: real(11, "H")?,
        l_total: real(12, "L_total")?,
        cost: real(13, "c")?,
        baseline: real(14, "b")?,
        g,
    })
}

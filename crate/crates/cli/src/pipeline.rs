//! The four pipeline stages. Each stage writes into its own directory and
//! leaves a `manifest.json` that links to the manifest it consumed.
//!
//! ```text
//! <root>/train/            seed-<s>.checkpoint.json, seed-<s>.train.csv
//! <root>/test-p<P>/        seed-<s>.test.csv
//! <root>/analysis-p<P>/    hysteresis.csv, occupancy.csv, summary.json,
//!                          occupancy.svg, hysteresis.svg
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use perspective_core::analysis::{analyze_test_logs, DirectionOptions, HysteresisReport};
use perspective_core::trainer::{
    occupancy_stats, test_run, train_run, Checkpoint, Phase, TrajectoryLog,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::checks::{self, Check};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{sha256_hex, Manifest, ParentLink, Stage, MANIFEST_FILE};
use crate::svg;

pub const THREADS_ENV: &str = "PA_THREADS";

/// Worker pool sized by `PA_THREADS` when set, otherwise by the machine.
pub fn worker_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{raw}`"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))
}

pub fn checkpoint_name(seed: u64) -> String {
    format!("seed-{seed}.checkpoint.json")
}

pub fn train_csv_name(seed: u64) -> String {
    format!("seed-{seed}.train.csv")
}

pub fn test_csv_name(seed: u64) -> String {
    format!("seed-{seed}.test.csv")
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn write_log(path: &Path, log: &TrajectoryLog) -> Result<(), CliError> {
    let file = File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    log.write_csv(&mut w).map_err(|e| CliError::log(path, e))?;
    w.flush().map_err(CliError::io(path))
}

fn read_log(path: &Path, seed: u64, manifest: &Manifest) -> Result<TrajectoryLog, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    let mut log =
        TrajectoryLog::read_csv(BufReader::new(file)).map_err(|e| CliError::log(path, e))?;
    log.seed = seed;
    log.config_hash = manifest.config_hash.clone();
    Ok(log)
}

/// Trains one agent per configured seed, in parallel.
pub fn train(config: &RunConfig, out: &Path) -> Result<Manifest, CliError> {
    let started = Instant::now();
    let experiment = config.experiment();
    experiment.validate()?;
    create_dir(out)?;
    let hash = experiment.hash();

    let pool = worker_pool()?;
    pool.install(|| {
        config.train.seeds.par_iter().try_for_each(|&seed| {
            let run = train_run(&experiment, seed)?;
            write_log(&out.join(train_csv_name(seed)), &run.log)?;
            let ck = Checkpoint::new(&run.agent, &run.baseline, seed, hash.clone());
            let path = out.join(checkpoint_name(seed));
            let file = File::create(&path).map_err(CliError::io(&path))?;
            let mut w = BufWriter::new(file);
            ck.write_json(&mut w)?;
            w.flush().map_err(CliError::io(&path))
        })
    })?;

    let mut manifest = Manifest::new(Stage::Train, config);
    for &seed in &config.train.seeds {
        manifest.record(out, &checkpoint_name(seed))?;
        manifest.record(out, &train_csv_name(seed))?;
    }
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(manifest)
}

/// Runs the regime-switching protocol from every checkpoint listed in the
/// training manifest under `train_dir`.
pub fn test(
    train_dir: &Path,
    out: &Path,
    period: Option<usize>,
    freeze_learning: bool,
) -> Result<Manifest, CliError> {
    let started = Instant::now();
    let (parent, parent_hash) = Manifest::read(train_dir, Stage::Train)?;
    let mut config = parent.config.clone();
    if let Some(p) = period {
        config.schedule.period = p;
    }
    let experiment = config.experiment();
    experiment.validate()?;
    let learn = config.train.learn_during_test && !freeze_learning;

    let mut checkpoints = Vec::new();
    for &seed in &parent.seeds {
        let path = train_dir.join(checkpoint_name(seed));
        let file = File::open(&path)
            .map_err(|e| CliError::Input(format!("missing checkpoint {}: {e}", path.display())))?;
        let ck = Checkpoint::read_json(BufReader::new(file))?;
        if ck.config_hash != parent.config_hash || ck.seed != seed {
            return Err(CliError::Input(format!(
                "{} does not belong to this training run",
                path.display()
            )));
        }
        checkpoints.push((seed, ck));
    }

    create_dir(out)?;
    let pool = worker_pool()?;
    pool.install(|| {
        checkpoints.par_iter().try_for_each(|(seed, ck)| {
            let run = test_run(&experiment, ck, &config.schedule, *seed, learn)?;
            write_log(&out.join(test_csv_name(*seed)), &run.log)
        })
    })?;

    let mut manifest = Manifest::new(Stage::Test, &config);
    manifest.seeds = parent.seeds.clone();
    manifest.period = Some(config.schedule.period);
    manifest.learning = Some(learn);
    manifest.parent = Some(ParentLink {
        dir: train_dir.display().to_string(),
        manifest_sha256: parent_hash,
    });
    for &seed in &parent.seeds {
        manifest.record(out, &test_csv_name(seed))?;
    }
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedOccupancy {
    pub seed: u64,
    pub early: [f64; 3],
    pub late: [f64; 3],
}

/// Zone occupancy over the first and last tenth of training episodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupancyTable {
    pub early_episodes: (usize, usize),
    pub late_episodes: (usize, usize),
    pub seeds: Vec<SeedOccupancy>,
    pub early_mean: [f64; 3],
    pub late_mean: [f64; 3],
    pub early_median: [f64; 3],
    pub late_median: [f64; 3],
}

impl OccupancyTable {
    pub fn from_logs(logs: &[TrajectoryLog]) -> Result<Self, CliError> {
        let episodes = logs.first().map_or(0, |l| l.episodes());
        if episodes == 0 {
            return Err(CliError::Input("no training episodes to summarize".into()));
        }
        let w = (episodes / 10).max(1);
        let early_episodes = (0, w);
        let late_episodes = (episodes - w, episodes);
        let mut seeds = Vec::new();
        for log in logs {
            let query = |(a, b): (usize, usize)| {
                occupancy_stats(log, a..b)
                    .map_err(|e| CliError::Input(format!("seed {}: {e}", log.seed)))
            };
            seeds.push(SeedOccupancy {
                seed: log.seed,
                early: query(early_episodes)?,
                late: query(late_episodes)?,
            });
        }
        let reduce = |pick: fn(&SeedOccupancy) -> [f64; 3], f: fn(&[f64]) -> f64| {
            let mut out = [0.0; 3];
            for (z, o) in out.iter_mut().enumerate() {
                let col: Vec<f64> = seeds.iter().map(|s| pick(s)[z]).collect();
                *o = f(&col);
            }
            out
        };
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let median = perspective_core::analysis::median;
        Ok(Self {
            early_mean: reduce(|s| s.early, mean),
            late_mean: reduce(|s| s.late, mean),
            early_median: reduce(|s| s.early, median),
            late_median: reduce(|s| s.late, median),
            early_episodes,
            late_episodes,
            seeds,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
struct EventCounts {
    kept: usize,
    dropped: usize,
}

#[derive(Debug, Clone, Serialize)]
struct Summary<'a> {
    period: usize,
    seeds: usize,
    events_a_to_b: EventCounts,
    events_b_to_a: EventCounts,
    g_score: perspective_core::HysteresisSummary,
    entropy_z: perspective_core::HysteresisSummary,
    reference_direction: &'a [f64],
    occupancy: &'a OccupancyTable,
}

pub struct AnalysisOutput {
    pub manifest: Manifest,
    pub report: HysteresisReport,
    pub occupancy: OccupancyTable,
}

pub const HYSTERESIS_CSV: &str = "hysteresis.csv";
pub const OCCUPANCY_CSV: &str = "occupancy.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const OCCUPANCY_SVG: &str = "occupancy.svg";
pub const HYSTERESIS_SVG: &str = "hysteresis.svg";

/// Switch-aligned hysteresis analysis of the test logs in `test_dir`, plus
/// occupancy from the training logs (by default those named in the test
/// manifest's parent link).
pub fn analyze(
    test_dir: &Path,
    out: &Path,
    train_dir: Option<&Path>,
) -> Result<AnalysisOutput, CliError> {
    let started = Instant::now();
    let (parent, parent_hash) = Manifest::read(test_dir, Stage::Test)?;
    let config = parent.config.clone();
    let schedule = config.schedule;

    let mut logs = Vec::new();
    for &seed in &parent.seeds {
        let path = test_dir.join(test_csv_name(seed));
        let log = read_log(&path, seed, &parent)?;
        if log.phase != Phase::Test || log.records.len() != schedule.total_steps() {
            return Err(CliError::Input(format!(
                "{}: expected {} test-phase rows, found {} {:?} rows",
                path.display(),
                schedule.total_steps(),
                log.records.len(),
                log.phase
            )));
        }
        logs.push(log);
    }
    let report = analyze_test_logs(&logs, &schedule, DirectionOptions::default())?;

    let train_dir: PathBuf = match (train_dir, &parent.parent) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(link)) => PathBuf::from(&link.dir),
        (None, None) => {
            return Err(CliError::Input(
                "test manifest has no training link; pass the training directory".into(),
            ))
        }
    };
    let (train_manifest, _) = Manifest::read(&train_dir, Stage::Train)?;
    let train_logs = train_manifest
        .seeds
        .iter()
        .map(|&s| read_log(&train_dir.join(train_csv_name(s)), s, &train_manifest))
        .collect::<Result<Vec<_>, _>>()?;
    let occupancy = OccupancyTable::from_logs(&train_logs)?;

    create_dir(out)?;
    write_hysteresis_csv(&out.join(HYSTERESIS_CSV), &report)?;
    write_occupancy_csv(&out.join(OCCUPANCY_CSV), &occupancy)?;
    let summary = Summary {
        period: report.period,
        seeds: report.seeds,
        events_a_to_b: EventCounts {
            kept: report.g_score.events_ab.0,
            dropped: report.g_score.events_ab.1,
        },
        events_b_to_a: EventCounts {
            kept: report.g_score.events_ba.0,
            dropped: report.g_score.events_ba.1,
        },
        g_score: report.g_score.summary,
        entropy_z: report.entropy_z.summary,
        reference_direction: &report.direction.unit,
        occupancy: &occupancy,
    };
    let summary_path = out.join(SUMMARY_JSON);
    let json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    fs::write(&summary_path, json).map_err(CliError::io(&summary_path))?;

    let mut files = vec![HYSTERESIS_CSV, OCCUPANCY_CSV, SUMMARY_JSON];
    if config.output.plots {
        let p = out.join(OCCUPANCY_SVG);
        fs::write(&p, svg::occupancy_chart(&occupancy)).map_err(CliError::io(&p))?;
        let p = out.join(HYSTERESIS_SVG);
        fs::write(&p, svg::hysteresis_chart(&report)).map_err(CliError::io(&p))?;
        files.extend([OCCUPANCY_SVG, HYSTERESIS_SVG]);
    }

    let mut manifest = Manifest::new(Stage::Analyze, &config);
    manifest.seeds = parent.seeds.clone();
    manifest.period = Some(schedule.period);
    manifest.learning = parent.learning;
    manifest.parent = Some(ParentLink {
        dir: test_dir.display().to_string(),
        manifest_sha256: parent_hash,
    });
    for name in files {
        manifest.record(out, name)?;
    }
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(AnalysisOutput {
        manifest,
        report,
        occupancy,
    })
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn write_hysteresis_csv(path: &Path, report: &HysteresisReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let to_err = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    w.write_record(["signal", "direction", "tau", "median", "q25", "q75"])
        .map_err(to_err)?;
    for signal in [&report.g_score, &report.entropy_z] {
        for band in [&signal.a_to_b, &signal.b_to_a] {
            for tau in 0..band.median.len() {
                w.write_record([
                    signal.signal.clone(),
                    band.direction.label().to_string(),
                    tau.to_string(),
                    num(band.median[tau]),
                    num(band.q25[tau]),
                    num(band.q75[tau]),
                ])
                .map_err(to_err)?;
            }
        }
    }
    w.flush().map_err(CliError::io(path))
}

fn write_occupancy_csv(path: &Path, table: &OccupancyTable) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let to_err = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    w.write_record([
        "window",
        "first_episode",
        "end_episode",
        "seed",
        "z0",
        "z1",
        "z2",
    ])
    .map_err(to_err)?;
    let windows = [
        (
            "early",
            table.early_episodes,
            table.early_mean,
            table.early_median,
        ),
        (
            "late",
            table.late_episodes,
            table.late_mean,
            table.late_median,
        ),
    ];
    for (name, (a, b), mean, median) in windows {
        let mut rows: Vec<(String, [f64; 3])> = table
            .seeds
            .iter()
            .map(|s| {
                let f = if name == "early" { s.early } else { s.late };
                (s.seed.to_string(), f)
            })
            .collect();
        rows.push(("mean".into(), mean));
        rows.push(("median".into(), median));
        for (label, f) in rows {
            w.write_record([
                name.to_string(),
                a.to_string(),
                b.to_string(),
                label,
                num(f[0]),
                num(f[1]),
                num(f[2]),
            ])
            .map_err(to_err)?;
        }
    }
    w.flush().map_err(CliError::io(path))
}

pub struct ReproduceOutput {
    pub train: Manifest,
    pub analyses: Vec<AnalysisOutput>,
    pub checks: Vec<Check>,
}

/// train → test → analyze for P=40 and each extra period, then evaluates
/// the run-level checks.
pub fn reproduce(
    config: &RunConfig,
    root: &Path,
    extra_periods: &[usize],
) -> Result<ReproduceOutput, CliError> {
    let train_dir = root.join("train");
    let train_manifest = train(config, &train_dir)?;
    let mut periods = vec![config.schedule.period];
    for &p in extra_periods {
        if !periods.contains(&p) {
            periods.push(p);
        }
    }
    let mut analyses = Vec::new();
    for &p in &periods {
        let test_dir = root.join(format!("test-p{p}"));
        test(&train_dir, &test_dir, Some(p), false)?;
        analyses.push(analyze(
            &test_dir,
            &root.join(format!("analysis-p{p}")),
            Some(&train_dir),
        )?);
    }

    let main = &analyses[0];
    let mut results = vec![
        checks::occupancy(&main.occupancy),
        checks::g_hysteresis(&main.report),
        checks::entropy_contrast(&main.report),
    ];
    for &p in &periods {
        results.push(checks::schedule(p));
    }
    Ok(ReproduceOutput {
        train: train_manifest,
        analyses,
        checks: results,
    })
}

/// Hash of a stage's manifest file, for printing the provenance chain.
pub fn manifest_hash(dir: &Path) -> Result<String, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(CliError::io(&path))?;
    Ok(sha256_hex(&bytes))
}

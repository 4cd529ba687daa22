use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use perspective_cli::checks::render_table;
use perspective_cli::pipeline;
use perspective_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "perspective",
    version,
    about = "Train and analyze the perspective-latent agent"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per seed; writes checkpoints, CSV logs and a manifest.
    Train {
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: `<output.dir>/train`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds overriding `train.seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Run the regime-switching protocol from trained checkpoints.
    Test {
        /// Directory written by `train`.
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Steps between regime switches (default: the trained config's period).
        #[arg(long)]
        period: Option<usize>,
        /// Keep weights fixed during the test phase.
        #[arg(long)]
        freeze_learning: bool,
    },
    /// Switch-aligned hysteresis analysis, occupancy tables and figures.
    Analyze {
        /// Directory written by `test`.
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training directory for occupancy (default: the one linked from the test manifest).
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// Full pipeline followed by a pass/fail table.
    Reproduce {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Root output directory (default: `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reduced training scale (40 episodes of 120 steps).
        #[arg(long)]
        quick: bool,
        /// Extra test periods run after the configured one.
        #[arg(long, value_delimiter = ',')]
        periods: Vec<usize>,
    },
}

fn load(config: Option<&PathBuf>, quick: bool) -> Result<RunConfig, CliError> {
    let mut config = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if quick {
        config.make_quick();
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, out, seeds } => {
            let mut config = load(config.as_ref(), false)?;
            if let Some(seeds) = seeds {
                config.train.seeds = seeds;
            }
            let out = out.unwrap_or_else(|| config.output.dir.join("train"));
            let m = pipeline::train(&config, &out)?;
            println!(
                "trained {} seed(s) in {:.1}s -> {}",
                m.seeds.len(),
                m.wall_clock_secs,
                out.display()
            );
        }
        Command::Test {
            train,
            out,
            period,
            freeze_learning,
        } => {
            let m = pipeline::test(&train, &out, period, freeze_learning)?;
            println!(
                "tested {} seed(s) at P={} -> {}",
                m.seeds.len(),
                m.period.unwrap_or(0),
                out.display()
            );
        }
        Command::Analyze { logs, out, train } => {
            let a = pipeline::analyze(&logs, &out, train.as_deref())?;
            let g = a.report.g_score.summary;
            let h = a.report.entropy_z.summary;
            println!(
                "g-score   trend A->B {:+.3}  B->A {:+.3}  asymmetry {:.4}",
                g.trend_ab, g.trend_ba, g.asymmetry
            );
            println!(
                "entropy z trend A->B {:+.3}  B->A {:+.3}  asymmetry {:.4}",
                h.trend_ab, h.trend_ba, h.asymmetry
            );
            println!("-> {}", out.display());
        }
        Command::Reproduce {
            config,
            out,
            quick,
            periods,
        } => {
            let mut config = load(config.as_ref(), quick)?;
            if quick && out.is_none() {
                config.output.dir = config.output.dir.join("quick");
            }
            let root = out.unwrap_or_else(|| config.output.dir.clone());
            let r = pipeline::reproduce(&config, &root, &periods)?;
            println!("train    {}", pipeline::manifest_hash(&root.join("train"))?);
            for a in &r.analyses {
                let p = a.manifest.period.unwrap_or(0);
                println!(
                    "test     {}  (P={p})",
                    pipeline::manifest_hash(&root.join(format!("test-p{p}")))?
                );
                println!(
                    "analyze  {}  (P={p})",
                    pipeline::manifest_hash(&root.join(format!("analysis-p{p}")))?
                );
            }
            print!("{}", render_table(&r.checks));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<CliError>()
                .map_or(1, CliError::exit_code);
            ExitCode::from(code)
        }
    }
}

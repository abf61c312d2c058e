use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use palmbar::config::{ExperimentConfig, OutputFormat, Overrides, SEED_ENV};
use palmbar::experiment::{run_experiment, write_outcome};

#[derive(Parser)]
#[command(name = "palmbar", version, about = "Queueing-network simulation and adjoint-relationship checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Base seed; falls back to $PALM_BAR_SEED, then the config, then 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Measured events after warmup; replaces the config horizon.
        #[arg(long)]
        events: Option<u64>,
        #[arg(long)]
        warmup: Option<f64>,
        #[arg(long)]
        reps: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Worker threads for replications.
        #[arg(long, value_name = "N")]
        threads: Option<usize>,
    },
}

/// Exit code 2 means the run finished but a check failed.
const VERDICT_FAILURE: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(VERDICT_FAILURE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<bool> {
    let Command::Run {
        config,
        seed,
        events,
        warmup,
        reps,
        out,
        format,
        threads,
    } = cli.command;
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let overrides = Overrides {
        seed,
        events,
        warmup,
        replications: reps,
        out,
        format: format.map(|f| match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }),
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = ExperimentConfig::load(&config)?
        .resolve(&overrides, env_seed.as_deref())
        .with_context(|| format!("in {}", config.display()))?;

    let outcome = run_experiment(&cfg).with_context(|| format!("running {}", cfg.experiment.name()))?;
    for line in &outcome.lines {
        println!("{line}");
    }
    let written = write_outcome(&outcome, &cfg)
        .with_context(|| format!("writing results to {}", cfg.output.dir.display()))?;
    for p in written {
        println!("wrote {}", p.display());
    }
    match outcome.verdict {
        Some(true) => println!("verdict: PASS"),
        Some(false) => println!("verdict: FAIL"),
        None => {}
    }
    Ok(outcome.verdict != Some(false))
}

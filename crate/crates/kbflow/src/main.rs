use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Parser;
use kbflow::record::format_number;
use kbflow::{run_experiment_with_workers, Experiment, ExperimentConfig};

/// Seeded experiments for Kalman-Bucy filters and their ensemble versions.
#[derive(Debug, Parser)]
#[command(name = "kbflow", version)]
struct Cli {
    experiment: Experiment,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config and KBFLOW_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    workers: Option<usize>,
}

fn run(cli: Cli) -> Result<bool> {
    let mut config = ExperimentConfig::load(&cli.config)?;
    if config.experiment != cli.experiment {
        bail!(
            "config {} is for experiment {}, not {}",
            cli.config.display(),
            config.experiment,
            cli.experiment
        );
    }
    config.apply_seed_overrides(cli.seed)?;
    if let Some(out) = cli.out {
        config.out_dir = Some(out);
    }
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let record = run_experiment_with_workers(&config, workers)?;
    let dir = config.out_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    let (csv, json) = record.write(&dir)?;
    for c in &record.criteria {
        println!(
            "{} {}: observed {} target {} tolerance {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            format_number(c.observed),
            format_number(c.target),
            format_number(c.tolerance)
        );
    }
    println!(
        "wrote {} and {} in {:.1} s",
        csv.display(),
        json.display(),
        record.wallclock_s
    );
    Ok(record.passed())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

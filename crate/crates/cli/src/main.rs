//! `eigenpert`: seeded verification experiments for empirical spectral
//! projectors, and a split-sample eigenvector estimator for data files.
//!
//! Exit status: 0 when every verdict passes, 1 on a failed verdict or data
//! check, 2 on a usage, configuration or I/O error.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{load_config, Command, RunConfig};
use run::{Failure, Options};

#[derive(Parser, Debug)]
#[command(
    name = "eigenpert",
    version,
    about = "Perturbation theory of empirical spectral projectors, verified by simulation"
)]
struct Cli {
    /// What to run.
    #[arg(value_enum)]
    command: Command,

    /// Data CSV for `estimate` (samples as rows) or `decompose` (symmetric
    /// matrix); overrides `data` in the config.
    input: Option<PathBuf>,

    /// JSON config; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Directory for report.json, cells.csv and metadata.json.
    #[arg(long)]
    out: Option<PathBuf>,

    /// No progress on stderr and no summary on stdout.
    #[arg(long)]
    quiet: bool,
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(c) = cfg.command {
        if c != cli.command {
            return Err(Failure::Usage(format!(
                "config is for `{c}` but `{}` was requested",
                cli.command
            )));
        }
    }
    cfg.command = Some(cli.command);
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let Some(input) = &cli.input {
        cfg.data = Some(input.clone());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = Options { quiet: cli.quiet };
    match resolve(&cli).and_then(|cfg| run::run(&cfg, &opts)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("eigenpert: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}

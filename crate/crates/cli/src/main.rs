//! `noisy-dro`: sweeps, SAA baselines, statistical experiments and plot data
//! for noisy-data distributionally robust allocation.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{cmd_plotdata, cmd_saa, cmd_solve, cmd_stats, CmdResult, Failure};
use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(
    name = "noisy-dro",
    version,
    about = "Distributionally robust allocation from noisy data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve every (epsilon, alpha, mode) combination and write results.csv.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compute the SAA baselines SYSTEM and SYSTEM_F and write saa.csv.
    Saa {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the coverage, consistency and biased-noise experiments.
    Stats {
        #[arg(long)]
        config: PathBuf,
    },
    /// Convert a results CSV into long format (stdout unless --out is given).
    Plotdata {
        /// Results CSV written by `solve`.
        input: PathBuf,
    },
}

fn load(path: &Path, cli: &Cli) -> CmdResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).map_err(Failure::Config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> CmdResult<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Config(anyhow::anyhow!("--jobs must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Config(e.into()))?;
    }
    match &cli.command {
        Command::Solve { config } => cmd_solve(&load(config, cli)?).map(drop),
        Command::Saa { config } => cmd_saa(&load(config, cli)?).map(drop),
        Command::Stats { config } => cmd_stats(&load(config, cli)?).map(drop),
        Command::Plotdata { input } => cmd_plotdata(input, cli.out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}

//! `aee-lab`: experiment runner for the spectral SPDE laboratory.
//!
//! Exit codes: 0 pass, 1 check failure, 2 configuration error, 3 numeric failure.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, CmdResult};
use config::{parse_override, ExperimentConfig};

/// Thread count used when `--threads` is absent.
const THREADS_ENV: &str = "AEE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "aee-lab", version, about = "Accelerated exponential Euler: order and error-law experiments")]
struct Cli {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: $AEE_THREADS, else all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (overrides the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra KEY=VALUE settings applied after the config file
    #[arg(long = "set", global = true, value_parser = parse_override)]
    set: Vec<(String, String)>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the mean-square convergence order over the m list
    Order,
    /// Compare U^m ensembles with the limit-process ensemble
    Distribution,
    /// Order and limit law for the finite-dimensional equation
    Sode,
    /// Deterministic invariant checks
    Selftest {
        /// Golden noise file to check instead of the built-in one
        #[arg(long)]
        golden: Option<PathBuf>,
        /// Write the golden noise file to PATH and exit
        #[arg(long, value_name = "PATH")]
        write_golden: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(out) = &cli.out {
        overrides.push(("out".into(), out.display().to_string()));
    }
    Ok(ExperimentConfig::from_text(&text, &overrides)?)
}

fn thread_count(cli: &Cli) -> Result<Option<usize>, CliError> {
    if let Some(n) = cli.threads {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: &Cli) -> CmdResult {
    if let Some(n) = thread_count(cli)? {
        if n == 0 {
            return Err(CliError::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} workers: {e}")))?;
    }
    match &cli.command {
        Command::Selftest { golden, write_golden } => {
            if let Some(path) = write_golden {
                let table = selftest::golden_table()?;
                let mut f = std::fs::File::create(path)?;
                table.write_to(&mut f)?;
                println!("wrote {}", path.display());
                return Ok(true);
            }
            Ok(selftest::run(golden.as_deref()))
        }
        cmd => {
            let cfg = load_config(cli)?;
            std::fs::create_dir_all(&cfg.out)?;
            std::fs::write(
                cfg.out.join("config.txt"),
                format!("# fingerprint={:016x}\n{}", cfg.fingerprint(), cfg.canonical_text()),
            )?;
            match cmd {
                Command::Order => commands::cmd_order(&cfg),
                Command::Distribution => commands::cmd_distribution(&cfg),
                Command::Sode => commands::cmd_sode(&cfg),
                Command::Selftest { .. } => unreachable!("handled above"),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => {
            println!("PASS");
            ExitCode::SUCCESS
        }
        Ok(false) => {
            println!("FAIL");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

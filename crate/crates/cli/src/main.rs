//! `fedtn`: run federated quantum tensor-network experiments from JSON
//! configs, evaluate checkpoints, and materialize data partitions.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::CliError;

#[derive(Parser)]
#[command(
    name = "fedtn",
    version,
    about = "Federated quantum tensor-network classifier simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a federated training experiment described by a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a CSV dataset and print metrics as JSON.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Split a CSV dataset into per-client files.
    Partition {
        #[arg(long)]
        data: PathBuf,
        /// JSON partition spec, e.g. `{"mode": "fractions", "fractions": [0.5, 0.5]}`.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic two-class dataset as CSV.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        h: usize,
        #[arg(long)]
        w: usize,
        #[arg(long)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Caps the worker pool when `FEDTN_THREADS` is set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("FEDTN_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| {
            CliError::input(format!(
                "FEDTN_THREADS must be a positive integer, got `{value}`"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Other(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Train { config, seed, out } => {
            let config = commands::load_config(&config, seed, out)?;
            commands::train(&config)
        }
        Command::Eval {
            model,
            data,
            threshold,
        } => commands::eval(&model, &data, threshold),
        Command::Partition {
            data,
            spec,
            out,
            seed,
        } => commands::partition_cmd(&data, &spec, &out, seed),
        Command::Synth {
            n,
            h,
            w,
            noise,
            seed,
            out,
        } => commands::synth(n, h, w, noise, seed, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

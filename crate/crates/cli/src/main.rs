mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "tqmc", version, about = "Transport maps for randomized quasi-Monte Carlo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long)]
    pub config: PathBuf,
    /// Trained model JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Suppress standard output.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a transport map and write model.json and fit_trace.json.
    Fit(Common),
    /// Estimate the informed subspace and write subspace.json.
    Subspace(Common),
    /// Self-normalized estimates with a trained model.
    Estimate(Common),
    /// MSE versus n for MC and RQMC over the configured proposals.
    Benchmark(Common),
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const CONFIG: u8 = 2;
    pub const RUNTIME: u8 = 3;

    pub fn config(msg: impl Into<String>) -> Self {
        Self { code: Self::CONFIG, message: msg.into() }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self { code: Self::RUNTIME, message: msg.into() }
    }
}

impl From<tqmc::error::Error> for CliError {
    fn from(e: tqmc::error::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { CliError::CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match &cli.command {
        Command::Fit(c) => commands::cmd_fit(c),
        Command::Subspace(c) => commands::cmd_subspace(c),
        Command::Estimate(c) => commands::cmd_estimate(c),
        Command::Benchmark(c) => commands::cmd_benchmark(c),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

//! Command-line front end: training runs, Fisher memory sweeps, transient
//! ensembles, proposition checks and connectivity reports. Every output is
//! CSV or JSON.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<nnrnn_core::Error> for CliError {
    fn from(e: nnrnn_core::Error) -> Self {
        match e {
            nnrnn_core::Error::Io(io) => CliError::Io(io),
            e if e.is_numerical() || matches!(e, nnrnn_core::Error::NonFinite(_)) => {
                CliError::Numerical(e.to_string())
            }
            e => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "nnrnn",
    version,
    about = "Non-normal RNN experiments and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on the copy or character task.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fisher memory curves for a sweep of (d, alpha, beta) matrices.
    Fmc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Accepted for uniformity; the computation is deterministic.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Hidden-state transients from random unit initial states.
    Transients {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Exact polynomial-growth checks, the memory lower bound, and the
    /// growth-classification suite.
    Props {
        /// Defaults to the standard grid when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Connectivity report of a saved model or Schur checkpoint.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Second checkpoint to diff against.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Train { config, out, seed } => commands::train(config, out, *seed),
        Command::Fmc { config, out, .. } => commands::fmc(config, out),
        Command::Transients { config, out, seed } => commands::transients(config, out, *seed),
        Command::Props { config, out, seed } => commands::props(config.as_deref(), out, *seed),
        Command::Report {
            checkpoint,
            compare,
            out,
        } => commands::report(checkpoint, compare.as_deref(), out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

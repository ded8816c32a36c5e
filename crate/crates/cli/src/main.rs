//! `lrd`: synthesize batches, align and decompose them, and score the result.

mod commands;
mod config;
mod report;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lrd::LrdError;

#[derive(Debug, Parser)]
#[command(name = "lrd", version, about = "Robust batch alignment by low-rank + sparse decomposition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic batch with ground-truth transforms and landmarks.
    Synth(commands::SynthArgs),
    /// Align and decompose a directory of images.
    Decompose(commands::DecomposeArgs),
    /// Score a saved result against ground truth.
    Eval(commands::EvalArgs),
    /// Run both solvers on the same input and report side by side.
    Compare(commands::CompareArgs),
    /// Render input / aligned / low-rank / error grids of a saved result.
    Montage(commands::MontageArgs),
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config; exit code 2.
    Usage(String),
    /// Failure while running; exit code 1.
    Run(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Run(m) => f.write_str(m),
        }
    }
}

impl From<LrdError> for CliError {
    fn from(e: LrdError) -> Self {
        CliError::Run(format!("{}: {e}", e.module()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LRD_LOG", "error"))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Decompose(a) => commands::decompose(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Montage(a) => commands::montage(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lrd: {e}");
            ExitCode::from(e.code())
        }
    }
}

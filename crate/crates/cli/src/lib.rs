//! The `elastreg` command line: register frame pairs, draw speed curves,
//! synthesize ground truth pairs and run the synthetic benchmarks.

mod args;
mod commands;
mod config;
mod output;

use clap::Parser;
use thiserror::Error;

use crate::args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] elastreg_core::Error),
    #[error("cannot write {path}: {source}")]
    Output {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use elastreg_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::InvalidInput(_)) => 1,
            CliError::Core(E::Ingestion { .. } | E::Io(_)) | CliError::Output { .. } | CliError::Csv(_) => 2,
            CliError::Core(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Register(a) => commands::register(a, &argv),
        Command::Speed(a) => commands::speed(a, &argv),
        Command::Synth(a) => commands::synth(a, &argv),
        Command::Bench(a) => commands::bench(a, &argv),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

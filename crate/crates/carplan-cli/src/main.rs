//! Operator entry point: synthetic data generation, training with ablation
//! toggles, open- and closed-loop evaluation, scene rendering, and gradient
//! verification.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Verification(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Verification(m) => write!(f, "verification failure: {m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "carplan", version, about = "Imitation-learning motion planner workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario corpus.
    GenData(commands::GenDataArgs),
    /// Train a planner on a corpus.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint open-loop or closed-loop.
    Eval(commands::EvalArgs),
    /// Render a scenario or rollout trace to SVG.
    Render(commands::RenderArgs),
    /// Verify analytic gradients against finite differences.
    GradCheck(commands::GradCheckArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, anything else is a
            // usage error (exit 1).
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Render(args) => commands::render(args),
        Command::GradCheck(args) => commands::grad_check(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub(crate) fn data_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

pub(crate) type CliResult = Result<(), CliError>;

pub(crate) fn parse_path(p: &PathBuf) -> Result<&PathBuf, CliError> {
    if p.exists() {
        Ok(p)
    } else {
        Err(CliError::Data(format!("{} does not exist", p.display())))
    }
}

//! `twostage` command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! failures while running.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] twostage::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Run(_) => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// PPO from scratch.
    Train,
    /// Behaviour cloning on demos from `demos.path`, generated if unset.
    TrainBc,
    /// Record scripted-expert demos to `OUT/demos.bin`.
    GenDemos,
    /// Stage one, then a scaled stage two from its best checkpoint.
    TwoStage,
    /// Baseline plus every scale cell; writes `OUT/table.csv`.
    Grid,
    /// Success rates of `eval.checkpoint` on both splits.
    Eval,
    /// Concatenate `export.metrics` logs into `OUT/trendline.csv`.
    Export,
}

#[derive(Debug, Parser)]
#[command(name = "twostage", version, about = "Point-cloud policy training with two-stage hyperparameter scaling")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Sectioned key = value config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for every artifact of the run.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// `section.key=value`, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Concurrent grid jobs.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
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
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

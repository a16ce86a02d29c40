//! `varplan`: run, sweep and inspect var planning studies.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use commands::{Axis, FixtureName};
use manifest::StudyArgs;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Case(String),
    #[error("{0}")]
    Opf(String),
    #[error("{0}")]
    Timeout(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Case(_) => 3,
            CliError::Opf(_) => 4,
            CliError::Timeout(_) => 5,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Case(_) => "case",
            CliError::Opf(_) => "opf_failure",
            CliError::Timeout(_) => "timeout",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "varplan", version, about = "Var expansion planning with progressive hedging over AC OPF scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one study and write its trace, solution, plan and summary.
    Run(StudyArgs),
    /// Repeat a study over values of the weight step or the penalty multiplier.
    Sweep {
        #[command(flatten)]
        study: StudyArgs,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Write a bundled test case as JSON.
    GenFixture {
        #[arg(long, value_enum)]
        name: FixtureName,
        /// Scenario generator seed (ieee24 only).
        #[arg(long)]
        seed: Option<u64>,
        /// Scenario count (ieee24 only).
        #[arg(long)]
        scenarios: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a case file and list its findings.
    Validate {
        #[arg(long)]
        case: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => commands::run(args),
        Command::Sweep { study, axis, values } => commands::sweep(study, *axis, values).map(|_| ()),
        Command::GenFixture { name, seed, scenarios, out } => commands::gen_fixture(*name, *seed, *scenarios, out),
        Command::Validate { case } => commands::validate_case(case),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error={} code={}: {e}", e.kind(), e.code());
            ExitCode::from(e.code())
        }
    }
}

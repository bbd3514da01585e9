//! `casmine`: config-driven front end for the mining/training pipeline.
//!
//! Exit codes: 0 success, 1 validation error (bad config, bad flags, bad
//! input data), 2 runtime error (missing files, failed IO).

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn is_validation(&self) -> bool {
        matches!(self, CliError::Validation(_))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<casmine_core::Error> for CliError {
    fn from(err: casmine_core::Error) -> Self {
        match &err {
            // Filesystem trouble and unreadable checkpoints are runtime
            // failures; everything else is the caller's inputs.
            casmine_core::Error::Io { .. } | casmine_core::Error::Checkpoint(_) => {
                CliError::Runtime(err.to_string())
            }
            _ => CliError::Validation(err.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "casmine",
    version,
    about = "Cascade positive mining: synthetic data, training, mining, evaluation, reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view dataset
    Synth(CommonArgs),
    /// Validate an external feature file and write the canonical form
    Ingest(CommonArgs),
    /// Train encoders on cascade-mined positives, writing checkpoint,
    /// run log, traces, and report
    Train(CommonArgs),
    /// Mine positives for one query against a trained checkpoint
    Mine(CommonArgs),
    /// Compute holdout retrieval recall and fold it into the report
    Eval(CommonArgs),
    /// Parse a run's report and reprint it
    Report(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run config (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Echo the resolved config and planned actions without computing
    #[arg(long)]
    dry_run: bool,
}

impl CommonArgs {
    fn resolve(&self) -> Result<config::ResolvedConfig, CliError> {
        let cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.resolve(self.seed, self.out.clone())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => commands::synth(&args.resolve()?, args.dry_run),
        Command::Ingest(args) => commands::ingest(&args.resolve()?, args.dry_run),
        Command::Train(args) => commands::train(&args.resolve()?, args.dry_run),
        Command::Mine(args) => commands::mine(&args.resolve()?, args.dry_run),
        Command::Eval(args) => commands::eval(&args.resolve()?, args.dry_run),
        Command::Report(args) => commands::report(&args.resolve()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version print to stdout with success; genuine usage
            // mistakes are validation failures.
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            eprint!("{err}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code())
        }
    }
}

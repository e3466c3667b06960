//! The `mgan` command line: one subcommand per pipeline stage plus `experiment`.

pub mod commands;
pub mod config;
pub mod figures;
pub mod record;
pub mod workspace;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ExperimentConfig;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
/// Internal failures that are neither bad config, bad input nor divergence.
pub const EXIT_INTERNAL: i32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message,
        }
    }

    pub fn input(message: String) -> Self {
        CliError {
            code: EXIT_INPUT,
            message,
        }
    }

    pub fn internal(message: String) -> Self {
        CliError {
            code: EXIT_INTERNAL,
            message,
        }
    }

    pub fn prefixed(self, prefix: &str) -> Self {
        CliError {
            message: format!("{prefix}: {}", self.message),
            ..self
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Runtime failures: divergence maps to the numeric exit code, the rest to input errors.
impl From<mgan_core::Error> for CliError {
    fn from(e: mgan_core::Error) -> Self {
        let code = match e.root() {
            mgan_core::Error::NonFinite { .. } => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mgan", version, about = "Conditional GAN PET synthesis experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML experiment configuration.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory; defaults to a run directory under the workspace root.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Replace an existing completed run directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a phantom corpus.
    Phantom(RunArgs),
    /// Train one GAN on one fold group of `paths.manifest`.
    Train(RunArgs),
    /// Synthesize PET for every study of `paths.manifest`.
    Synth(RunArgs),
    /// Score `paths.synthetic_manifest` against `paths.manifest`.
    Quality(RunArgs),
    /// Train a detector and evaluate it on a held-out corpus.
    Detect(RunArgs),
    /// Full two-fold protocol over the configured arms.
    Experiment(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Phantom(_) => "phantom",
            Command::Train(_) => "train",
            Command::Synth(_) => "synth",
            Command::Quality(_) => "quality",
            Command::Detect(_) => "detect",
            Command::Experiment(_) => "experiment",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Phantom(a)
            | Command::Train(a)
            | Command::Synth(a)
            | Command::Quality(a)
            | Command::Detect(a)
            | Command::Experiment(a) => a,
        }
    }
}

/// Runs a parsed command; returns the run directory.
pub fn run(cmd: &Command, progress: &mut dyn FnMut(&str)) -> Result<PathBuf, CliError> {
    let args = cmd.args();
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    commands::check_inputs(cmd, &cfg)?;
    let ws = workspace::RunDir::prepare(cmd.name(), &cfg, args.out.as_deref(), args.force)?;
    let mut rec = record::RunRecord::new(cmd.name(), &cfg, ws.path());
    match cmd {
        Command::Phantom(_) => commands::phantom(&cfg, &ws, &mut rec, progress)?,
        Command::Train(_) => commands::train(&cfg, &ws, &mut rec, progress)?,
        Command::Synth(_) => commands::synth(&cfg, &ws, &mut rec, progress)?,
        Command::Quality(_) => commands::quality(&cfg, &ws, &mut rec, progress)?,
        Command::Detect(_) => commands::detect(&cfg, &ws, &mut rec, progress)?,
        Command::Experiment(_) => commands::experiment(&cfg, &ws, &mut rec, progress)?,
    }
    rec.finish(ws.path())?;
    Ok(ws.path().to_path_buf())
}

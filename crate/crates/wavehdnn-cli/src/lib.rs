//! Command-line surface for the WaveHDNN pipeline: ingest, train, evaluate,
//! sweep, and report.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error,
//! 3 checkpoint/dataset compatibility mismatch.

pub mod config;
pub mod evaluate;
pub mod ingest;
pub mod manifest;
pub mod report;
pub mod sweep;
pub mod train;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, malformed input files, or invalid configuration (exit 2).
    Usage(String),
    /// Runtime failure: I/O, numeric aborts (exit 1).
    Runtime(String),
    /// Checkpoint/dataset dimension mismatch (exit 3).
    Compat(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Compat(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) | CliError::Compat(m) => write!(f, "{m}"),
        }
    }
}

impl From<wavehdnn::Error> for CliError {
    fn from(err: wavehdnn::Error) -> Self {
        use wavehdnn::Error as E;
        match &err {
            E::Config(_) | E::MalformedLine { .. } | E::EmptyInput(_) => {
                CliError::Usage(err.to_string())
            }
            E::DimensionMismatch { .. } => CliError::Compat(err.to_string()),
            _ => CliError::Runtime(err.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "wavehdnn",
    version,
    about = "Wavelet-enhanced hypergraph diffusion recommender pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ingest raw `user<TAB>item` interactions into a split archive.
    Ingest {
        /// TSV (optionally .gz) interaction file.
        #[arg(long)]
        input: PathBuf,
        /// Output archive directory.
        #[arg(long)]
        out: PathBuf,
        /// Split seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Redo the ingest even if a matching archive exists.
        #[arg(long)]
        force: bool,
    },
    /// Train one or more seeded runs from a split archive.
    Train {
        /// Split archive directory (from `ingest`).
        #[arg(long)]
        data: PathBuf,
        /// Flat `key = value` config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; one run directory per seed.
        #[arg(long)]
        out: PathBuf,
        /// Number of consecutive seeds starting at the config seed.
        #[arg(long)]
        seeds: Option<u64>,
        /// Re-run even when a matching completed manifest exists.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint against a split archive.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split to score: `val` masks train, `test` masks train+val.
        #[arg(long, default_value = "test")]
        split: String,
        /// Config file (falls back to the manifest next to the checkpoint).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated K values.
        #[arg(long, default_value = "10,20,40")]
        ks: String,
    },
    /// Train every cell of a hyperparameter grid and emit tidy CSV.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// Grid file: `key = v1,v2,v3` lines, Cartesian product.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Base config file for non-swept keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seeds per cell.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Merge run aggregates into one comparison table.
    Report {
        /// Run directories (each containing aggregate.json).
        #[arg(long = "runs", required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Output format: json, csv, or md.
        #[arg(long, default_value = "md")]
        format: String,
    },
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest {
            input,
            out,
            seed,
            force,
        } => ingest::cmd_ingest(&input, &out, seed, force),
        Command::Train {
            data,
            config,
            out,
            seeds,
            force,
        } => train::cmd_train(&data, config.as_deref(), &out, seeds, force),
        Command::Evaluate {
            checkpoint,
            data,
            split,
            config,
            ks,
        } => evaluate::cmd_evaluate(&checkpoint, &data, &split, config.as_deref(), &ks),
        Command::Sweep {
            data,
            grid,
            out,
            config,
            seeds,
            force,
        } => sweep::cmd_sweep(&data, &grid, &out, config.as_deref(), seeds, force),
        Command::Report { runs, format } => report::cmd_report(&runs, &format),
    }
}

//! `spc`: run selective pseudo-label clustering, score labellings, and check
//! the linear-encoder theory.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 data or I/O
//! error, 3 numerical failure, 4 a theory claim failed.

mod commands;
mod config;
mod staging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::DatasetKind;

#[derive(Debug, Parser)]
#[command(name = "spc", version, about = "Selective pseudo-label clustering")]
struct Cli {
    /// Worker threads (default: number of cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Log progress to stderr (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an ensemble and write a run directory.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory to create; must not exist or be empty.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        dataset: Option<DatasetKind>,
        /// IDX image file (overrides the config).
        #[arg(long)]
        images: Option<PathBuf>,
        /// IDX label file (overrides the config).
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Training master seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a predicted `index,label` CSV against a ground-truth one.
    Eval { predicted: PathBuf, truth: PathBuf },
    /// Run every theory experiment and write the report.
    VerifyTheory {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// A diagnostic with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    /// Classify a library error raised while training or running experiments.
    pub fn from_core(e: spc_core::Error) -> Self {
        let code = if e.is_numeric_error() {
            3
        } else if e.is_data_error() {
            2
        } else {
            1
        };
        Failure { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }

    let result = match cli.command {
        Command::Run {
            config,
            out,
            dataset,
            images,
            labels,
            seed,
        } => commands::run(commands::RunArgs {
            config,
            out,
            dataset,
            images,
            labels,
            seed,
        }),
        Command::Eval { predicted, truth } => commands::eval(&predicted, &truth),
        Command::VerifyTheory { config, out, seed } => commands::verify_theory(config.as_deref(), &out, seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

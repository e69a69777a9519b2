//! arealab: config-driven experiment runner over the arealab core crate.
//!
//! Exit codes: 0 success, 1 input error (bad flags, malformed config,
//! unreadable files), 2 invariant violation (the experiment ran but a
//! checked law failed). Reports are written before a violation exits.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod experiments;
mod gen;
mod report;

/// A failed invocation, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Unknown names, malformed config, unreadable or ill-formed files.
    Input(String),
    /// Inputs were fine but a checked invariant failed.
    Invariant(String),
}

pub type CliResult<T> = Result<T, Failure>;

impl From<arealab::Error> for Failure {
    fn from(e: arealab::Error) -> Failure {
        Failure::Input(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "arealab",
    version,
    about = "Geometric measure theory experiments on uniform grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a builtin test field or mask in the shared file format
    Gen {
        /// Builtin name; an unknown name lists what is available
        name: String,
        /// key=value parameters; length values accept an `h` suffix
        params: Vec<String>,
        /// Directory the files are written into
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the experiment described by a config file
    Run {
        /// TOML experiment config
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `out`
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the image-side area sampling
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Seed override; the config's `seed` applies when absent
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretty-print a report file produced by `run`
    Report {
        /// Path to a report.jsonl
        file: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here as well; only genuine usage
            // mistakes are input errors.
            let usage_error = e.use_stderr();
            let _ = e.print();
            return if usage_error { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen { name, params, out } => gen::run(&name, &params, &out),
        Command::Run { config, out, threads, seed } => {
            experiments::run(&config, out.as_deref(), threads, seed)
        }
        Command::Report { file } => report::print(&file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Invariant(msg)) => {
            eprintln!("invariant violation: {msg}");
            ExitCode::from(2)
        }
    }
}

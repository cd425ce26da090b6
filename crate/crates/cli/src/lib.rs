//! Command-line driver for the tracking toolkit.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::Failure;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "uavtrack",
    version,
    about = "Synthetic UAV tracking: generate, track, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub(crate) struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate ground truth, detections, and embeddings.
    Synth(commands::synth::SynthArgs),
    /// Run the online tracker over detections.
    Track(commands::track::TrackArgs),
    /// Score tracking results against ground truth.
    Eval(commands::eval::EvalArgs),
    /// Self-test the fusion modules and losses on rendered maps.
    Modules(commands::modules::ModulesArgs),
    /// Time the main stages.
    Bench(commands::bench::BenchArgs),
}

/// Parses `argv` and runs the chosen subcommand, returning the exit code.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth::run(a),
        Command::Track(a) => commands::track::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Modules(a) => commands::modules::run(a),
        Command::Bench(a) => commands::bench::run(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}

//! `studpar`: distill a student group, prune it, model and simulate serving
//! it, and compare simulation runs.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.

mod commands;
mod config;
mod error;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "studpar", version, about = "Student-group distillation and serving experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train the teacher and distill it into a sequentially boosted group.
    Distill(Common),
    /// Train every prefix of a distilled group and write its accuracy table.
    Prune(Common),
    /// Run the serving simulator and write metrics and per-request latencies.
    Simulate(Common),
    /// Calibrate the latency model and write the factor table.
    Perf(Common),
    /// Merge simulation metrics into comparison and series tables.
    Report {
        #[command(flatten)]
        common: Common,
        /// Metrics files to compare.
        inputs: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Distill(c) => commands::distill(c.config.as_deref(), c.seed, &c.out),
        Command::Prune(c) => commands::prune(c.config.as_deref(), c.seed, &c.out),
        Command::Simulate(c) => commands::simulate(c.config.as_deref(), c.seed, &c.out),
        Command::Perf(c) => commands::perf(c.config.as_deref(), c.seed, &c.out),
        Command::Report { common, inputs } => commands::report(common.config.as_deref(), &inputs, &common.out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("studpar: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

// `!(x < tol)` is used on purpose: it also fails on NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

mod commands;
mod error;
mod manifest;

#[derive(Parser, Debug)]
#[command(
    name = "hvalign",
    version,
    about = "Human/model alignment metrics, pareto frontiers, CSF fits and image filters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Error consistency, shape bias and OOD accuracy of a model against human trials
    Metrics(commands::metrics::MetricsArgs),
    /// Exact accuracy/consistency frontier of an ideal responder
    Pareto(commands::pareto::ParetoArgs),
    /// Fit a Gaussian blur to a contrast sensitivity or optical transfer curve
    CsfFit(commands::csf::CsfFitArgs),
    /// Apply a blur, resize, high-pass or Fourier filter to images
    Filter(commands::filter::FilterArgs),
    /// Learn a Fourier filter that makes a scorer agree with human errors
    LearnFilter(commands::learn::LearnArgs),
    /// Write the synthetic low-frequency task to disk
    SynthTask(commands::learn::SynthArgs),
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// Output directory; created if missing
    #[arg(short, long)]
    pub out: PathBuf,

    /// Worker cap. Recorded in the manifest; computation is single-threaded.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,

    /// Cross-check the result against brute-force references (small inputs only)
    #[arg(long)]
    pub verify: bool,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Metrics(args) => commands::metrics::run(&args),
        Command::Pareto(args) => commands::pareto::run(&args),
        Command::CsfFit(args) => commands::csf::run(&args),
        Command::Filter(args) => commands::filter::run(&args),
        Command::LearnFilter(args) => commands::learn::run(&args),
        Command::SynthTask(args) => commands::learn::synth(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error::exit_code(&e))
        }
    }
}

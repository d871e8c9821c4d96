//! Command-line surface: train, embed, score, eval, synth, fetch.
//!
//! Exit codes: 0 ok, 2 validation (including usage errors), 3 io,
//! 4 numeric failure, 5 artifact-binding mismatch.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser)]
#[command(name = "gnsm", version)]
#[command(about = "Score-based anomaly detection for categorical tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset with an exact-likelihood oracle
    Synth(commands::synth::SynthArgs),
    /// Train a score network on the inlier rows of a dataset
    Train(commands::train::TrainArgs),
    /// Embed inlier rows and fit the GMM scoring head
    Embed(commands::embed::EmbedArgs),
    /// Rank rows by anomaly score under a checkpoint + scorer pair
    Score(commands::score::ScoreArgs),
    /// Compute AP/AUROC and precision-recall curves from score files
    Eval(commands::eval::EvalArgs),
    /// Download a dataset from a checksum manifest and verify its digest
    Fetch(commands::fetch::FetchArgs),
}

fn main() -> ExitCode {
    // Usage errors exit 2 via clap, matching the validation class.
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Embed(args) => commands::embed::run(args),
        Command::Score(args) => commands::score::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Fetch(args) => commands::fetch::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

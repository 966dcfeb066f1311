//! Command-line pipeline driver.
//!
//! Typical chain on synthetic data:
//!
//! ```text
//! ethident gen --out work/data --seed 7
//! ethident build --records work/data/records.csv --out work/graph.lwaig
//! ethident sample --graph work/graph.lwaig --labels work/data/labels.csv \
//!     --strategy amount --out work/ds
//! ethident train --data work/ds-A --out work/run
//! ethident eval --checkpoint work/run/checkpoint.hgate --data work/ds-A
//! ```
//!
//! Commands exit 0 on success; failures print a machine-readable JSON error
//! report to stderr and exit 1.

mod commands;
mod report;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ethident", version, about = "Account identification on interaction graphs")]
struct Cli {
    /// Seed override applied to every command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// key=value config document; command flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic behavior-pattern dataset (records.csv + labels.csv).
    Gen(commands::GenArgs),
    /// Build a lightweight interaction-graph snapshot from raw records.
    Build(commands::BuildArgs),
    /// Sample labeled neighborhood subgraphs into a dataset directory.
    Sample(commands::SampleArgs),
    /// Train the encoder on a sampled dataset.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(commands::EvalArgs),
    /// Extract the 16 manual account features into a CSV table.
    Features(commands::FeaturesArgs),
    /// Cross-validate the logistic-regression baseline on a feature table.
    Baseline(commands::BaselineArgs),
    /// Emit subgraph embeddings as CSV.
    Embed(commands::EmbedArgs),
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Gen(args) => commands::gen(args, &cli.seed, &cli.config),
        Command::Build(args) => commands::build(args),
        Command::Sample(args) => commands::sample(args, &cli.seed, &cli.config),
        Command::Train(args) => commands::train(args, &cli.seed, &cli.config),
        Command::Eval(args) => commands::eval(args),
        Command::Features(args) => commands::features(args),
        Command::Baseline(args) => commands::baseline(args, &cli.seed, &cli.config),
        Command::Embed(args) => commands::embed(args),
    };
    if let Err(e) = outcome {
        eprintln!("{}", report::error_json(&e));
        std::process::exit(1);
    }
}

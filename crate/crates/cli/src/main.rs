//! `lira`: build, train and evaluate a learned partition-probing ANN index.

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{Knobs, RunConfig, DEFAULT_OUT_DIR};
use stages::{AnalyzeArgs, BenchArgs, Ctx, QueryArgs};

#[derive(Debug, Parser)]
#[command(name = "lira", version, about = "Partition-based ANN search with learned probing and learned redundancy")]
struct Cli {
    /// TOML file with knob values; command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Directory for artifacts and reports
    #[arg(long, global = true, env = "LIRA_OUT_DIR", default_value = DEFAULT_OUT_DIR)]
    out: PathBuf,

    /// Worker threads; 1 runs everything on the calling thread [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(flatten)]
    knobs: Knobs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute (or reuse the cached) exact kNN of every query
    Groundtruth,
    /// Cluster a training subset and write the hard and fuzzy indexes
    Build,
    /// Train the probing model on the training subset
    Train,
    /// Duplicate the points the model finds hardest and write the final index
    Redundancy,
    /// Search queries and print neighbours with recall, cmp and nprobe
    Query(QueryArgs),
    /// Recall/cmp sweeps and the per-query comparison
    Bench(BenchArgs),
    /// Probing waste, long-tail histogram and replica-partition curves
    Analyze(AnalyzeArgs),
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let file = match &cli.config {
        Some(path) => Knobs::from_file(path)?,
        None => Knobs::default(),
    };
    let cfg = RunConfig::resolve(cli.knobs.over(file))?;
    let ctx = Ctx::new(cfg, cli.out)?;
    match &cli.command {
        Command::Groundtruth => stages::groundtruth(&ctx),
        Command::Build => stages::build(&ctx),
        Command::Train => stages::train(&ctx),
        Command::Redundancy => stages::redundancy(&ctx),
        Command::Query(args) => stages::query(&ctx, args),
        Command::Bench(args) => stages::bench(&ctx, args),
        Command::Analyze(args) => stages::analyze(&ctx, args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Command-line front end: synthesize or load a dataset, train, evaluate,
//! sweep and inspect the dual-branch classifier.
//!
//! Exit status: 0 success, 2 configuration, 3 I/O or malformed input,
//! 4 numeric divergence, 5 checkpoint/config mismatch, 1 anything else.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CmdResult, Failure};
use config::{ConfigArgs, RunConfig};

/// Dual-branch RGB + enriched-YCbCr transformer for telling GAN images,
/// computer graphics and photographs apart.
#[derive(Parser, Debug)]
#[command(name = "chromavit", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the synthetic three-class dataset into --data-dir
    Synth,
    /// Write a seeded 60:20:20 split of --data-dir to <out_dir>/split.csv
    Split,
    /// Train and keep the best-validation checkpoint in --out-dir
    Train,
    /// Accuracy and confusion matrix on one partition
    Eval,
    /// Accuracy over a ladder of JPEG qualities
    SweepJpeg,
    /// Accuracy over a ladder of Gaussian noise sigmas
    SweepNoise,
    /// One-vs-rest DET curves and the confusion matrix
    Det,
    /// Dump the YCbCr and enriched chroma planes of --image
    EnrichDump,
    /// Export the fused head-input features
    Features,
    /// Attention rollout heatmaps per branch
    Attention,
}

fn run(cli: &Cli) -> CmdResult {
    let cfg = RunConfig::load(&cli.config)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Failure::from(chromavit::Error::Config(e.to_string())))?;
    }
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Split => commands::split(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::SweepJpeg => commands::sweep_jpeg(&cfg),
        Command::SweepNoise => commands::sweep_noise(&cfg),
        Command::Det => commands::det(&cfg),
        Command::EnrichDump => commands::enrich_dump(&cfg),
        Command::Features => commands::features(&cfg),
        Command::Attention => commands::attention(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code)
        }
    }
}

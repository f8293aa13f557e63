mod commands;
mod config;
mod report;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::{ConfigError, PipelineConfig};

/// Find and dampen attribute-specific SAE latents in embedding spaces.
#[derive(Debug, Parser)]
#[command(name = "debiaslens", version)]
struct Cli {
    /// JSON pipeline config; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training and sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a Matryoshka top-k SAE on embeddings.
    Train(commands::TrainArgs),
    /// Find group-specific latents for each attribute.
    Probe(commands::ProbeArgs),
    /// Rewrite embeddings with the bias-set latents modulated.
    Debias(commands::DebiasArgs),
    /// MaxSkew@k of cosine retrieval, optionally before and after.
    EvalSkew(commands::EvalSkewArgs),
    /// Share of prompts whose yes-rate differs between two groups.
    EvalDisproportion(commands::EvalDisproportionArgs),
    /// Accuracy on ambiguous questions.
    EvalQa(commands::EvalQaArgs),
    /// Write a planted-bias gallery and biased queries.
    Synth(commands::SynthArgs),
    /// Grid over expansion factor, tau and alpha.
    Sweep(sweep::SweepArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| anyhow::anyhow!("cannot create output directory {}: {e}", cli.out.display()))?;
    let ctx = Context {
        config,
        out: cli.out,
        seed: cli.seed,
    };
    match &cli.command {
        Command::Train(a) => commands::train(ctx, a),
        Command::Probe(a) => commands::probe(ctx, a),
        Command::Debias(a) => commands::debias(ctx, a),
        Command::EvalSkew(a) => commands::eval_skew(ctx, a),
        Command::EvalDisproportion(a) => commands::eval_disproportion(ctx, a),
        Command::EvalQa(a) => commands::eval_qa(ctx, a),
        Command::Synth(a) => commands::synth(ctx, a),
        Command::Sweep(a) => sweep::sweep(ctx, a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<debiaslens_core::Error>() {
        Some(e) if e.is_validation() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Ok(n) = std::env::var("DEBIASLENS_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => log::warn!("ignoring DEBIASLENS_THREADS={n}"),
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

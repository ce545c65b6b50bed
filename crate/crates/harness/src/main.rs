use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use flipscope::{parse_mock_provider, parse_sequence_arg, ExperimentConfig, ExperimentKind, RunOptions};
use flipscope_llm::ProviderConfig;

#[derive(Parser)]
#[command(name = "flipscope", version, about = "Coin-flip randomness experiments with language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample flip sequences for every P(Tails) in the grid.
    Generate(RunArgs),
    /// Read p(Random) for repeated concepts.
    Judge(RunArgs),
    /// Concept mass of prediction trees over repeated concepts.
    Curve(RunArgs),
    /// Rebuild tables and plot data of a run directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Randomness score of one sequence against simple repeaters.
    Score {
        /// Bits (0110), H/T letters (HTTH) or a list (Heads, Tails, ...).
        sequence: String,
        #[arg(long, default_value_t = 4)]
        max_pattern_len: usize,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// `mock:<modelspec>` or `remote` (endpoint taken from the config).
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep finished cells and redo only missing or failed ones.
    #[arg(long)]
    resume: bool,
    /// Stop after this many cells.
    #[arg(long)]
    max_cells: Option<usize>,
}

fn build_config(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let mut c = ExperimentConfig::load(path)?;
            c.kind = kind;
            c
        }
        None => {
            let Some(provider) = args.provider.as_deref() else {
                bail!("give --config or --provider mock:<modelspec>");
            };
            if provider == "remote" {
                bail!("--provider remote needs --config with the endpoint settings");
            }
            ExperimentConfig::new(kind, ProviderConfig::mock(parse_mock_provider(provider)?))
        }
    };
    match args.provider.as_deref() {
        Some("remote") if !config.provider.kind.is_remote() => {
            bail!("--provider remote but the config describes a mock provider")
        }
        Some("remote") | None => {}
        Some(mock) if args.config.is_some() => {
            let spec = parse_mock_provider(mock)?;
            config.provider.kind = flipscope_llm::ProviderKind::Mock;
            config.provider.mock_model = Some(spec);
        }
        Some(_) => {}
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.apply_env();
    config.validate()?;
    Ok(config)
}

fn run_command(kind: ExperimentKind, args: &RunArgs) -> Result<ExitCode> {
    let config = build_config(kind, args)?;
    let opts = RunOptions {
        resume: args.resume,
        max_cells: args.max_cells,
    };
    let summary = flipscope::run(&config, &args.out, &opts)?;
    let report = flipscope::report(&args.out)?;
    log::info!("wrote {} tables, {} gaps", report.files.len(), report.gaps);
    println!(
        "cells: {} total, {} skipped, {} completed, {} failed, {} pending; network calls {}, cache hits {}",
        summary.total_cells,
        summary.skipped,
        summary.completed,
        summary.failed,
        summary.pending,
        summary.network_calls,
        summary.cache_hits
    );
    Ok(if summary.failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(args) => run_command(ExperimentKind::Generation, args),
        Command::Judge(args) => run_command(ExperimentKind::Judgment, args),
        Command::Curve(args) => run_command(ExperimentKind::LearningCurve, args),
        Command::Report { out } => flipscope::report(out).map(|r| {
            for f in &r.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }),
        Command::Score {
            sequence,
            max_pattern_len,
            epsilon,
        } => parse_sequence_arg(sequence)
            .and_then(|x| flipscope::score(&x, *max_pattern_len, *epsilon))
            .and_then(|s| serde_json::to_string(&s).context("serializing score"))
            .map(|json| {
                println!("{json}");
                ExitCode::SUCCESS
            }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}

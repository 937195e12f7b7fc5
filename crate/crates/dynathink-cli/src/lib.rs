//! Command-line harness for the adaptive fast/slow orchestration policy.
//!
//! Three subcommands share one configuration surface:
//!
//! * `run` — execute the adaptive policy once and write
//!   `verdicts.jsonl`, `ledger.json`, `summary.csv`, and `buckets.csv`.
//! * `baseline` — plain self-consistency at a fixed sample count, same
//!   artifact set.
//! * `sweep` — grid over threshold modes, verification orders, and budget
//!   caps; one `summary.csv` row and one bucket CSV per cell.
//!
//! Values come from an optional TOML config file; any flag of the same
//! name overrides the file.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

pub mod artifacts;
pub mod config;
pub mod runner;

use config::{ConfigFile, Overrides};

fn parse_token<T>(value: &str) -> Result<T, String>
where
    T: std::str::FromStr<Err = String>,
{
    value.parse()
}

#[derive(Debug, Parser)]
#[command(name = "dynathink", version, about = "Adaptive fast/slow reasoning orchestration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the adaptive policy over a dataset.
    Run(RunArgs),
    /// Run plain self-consistency at a fixed sample count.
    Baseline(BaselineArgs),
    /// Run the policy grid (threshold x order x budget cap).
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML config file; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Dataset path (JSONL, one question per line).
    #[arg(long)]
    pub dataset: Option<PathBuf>,

    /// Answer format: numeric | multiple-choice | boolean | freeform.
    #[arg(long, value_parser = parse_token::<dynathink::dataset::FormatHint>)]
    pub format: Option<dynathink::dataset::FormatHint>,

    /// Completion source: http | fixture | synthetic.
    #[arg(long)]
    pub backend: Option<String>,

    /// Transcript fixture (JSONL) for the fixture backend.
    #[arg(long)]
    pub fixture: Option<PathBuf>,

    /// Question profile (JSON) for the synthetic backend.
    #[arg(long)]
    pub profile: Option<PathBuf>,

    /// Vote threshold: plurality | strict-majority | unanimous.
    #[arg(long, value_parser = parse_token::<dynathink::types::ThresholdMode>)]
    pub threshold: Option<dynathink::types::ThresholdMode>,

    /// Check order: consistency-steps | steps-consistency.
    #[arg(long, value_parser = parse_token::<dynathink::types::VerificationOrder>)]
    pub order: Option<dynathink::types::VerificationOrder>,

    /// Samples drawn in the first round.
    #[arg(long)]
    pub initial_n: Option<u32>,

    /// Samples added per later round.
    #[arg(long)]
    pub increment: Option<u32>,

    /// Per-question query budget.
    #[arg(long)]
    pub budget_cap: Option<u32>,

    /// Seed override for the synthetic backend.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory for artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Model identifier forwarded to the backend.
    #[arg(long)]
    pub model_id: Option<String>,

    /// Sampling temperature (must be positive when drawing multiple samples).
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Fixed sample count (defaults to the budget cap).
    #[arg(long)]
    pub n: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Budget caps swept, comma separated (defaults to the single cap).
    #[arg(long, value_delimiter = ',')]
    pub caps: Option<Vec<u32>>,
}

impl CommonArgs {
    fn into_overrides(self, caps: Option<Vec<u32>>) -> (Option<PathBuf>, Overrides) {
        let overrides = Overrides {
            dataset: self.dataset,
            format: self.format.map(|f| f.to_string()),
            backend: self.backend,
            fixture: self.fixture,
            profile: self.profile,
            threshold: self.threshold.map(|t| t.to_string()),
            order: self.order.map(|o| o.to_string()),
            initial_n: self.initial_n,
            increment: self.increment,
            budget_cap: self.budget_cap,
            seed: self.seed,
            out: self.out,
            model_id: self.model_id,
            temperature: self.temperature,
            budget_caps: caps,
        };
        (self.config, overrides)
    }
}

fn resolve_from(common: CommonArgs, caps: Option<Vec<u32>>) -> Result<config::Effective> {
    let (config_path, overrides) = common.into_overrides(caps);
    let file = match config_path {
        Some(path) => ConfigFile::from_path(&path)?,
        None => ConfigFile::default(),
    };
    config::resolve(file, &overrides)
}

/// Execute a parsed command; the returned line is printed to stdout.
pub async fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Run(args) => {
            let effective = resolve_from(args.common, None)?;
            runner::cmd_run(&effective).await
        }
        Command::Baseline(args) => {
            let effective = resolve_from(args.common, None)?;
            runner::cmd_baseline(&effective, args.n).await
        }
        Command::Sweep(args) => {
            let effective = resolve_from(args.common, args.caps)?;
            runner::cmd_sweep(&effective).await
        }
    }
}

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use purgemix_core::pipeline::{Pipeline, PipelineConfig, RunMode, RunOptions, RunState, StageName};
use purgemix_core::prompt::PromptPack;

#[derive(Parser)]
#[command(name = "purgemix", version, about = "Curate low-quality instruction data: rate, denoise, select, fuse")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rate every input sample with the LLM.
    Rate(StageArgs),
    /// Denoise the ratings with the estimated score transition matrix.
    Correct(StageArgs),
    /// Split corrected scores into low- and high-quality sets.
    Split(StageArgs),
    /// Cluster the low-quality set and pick representatives.
    Select(StageArgs),
    /// Fuse representatives into merged corpora.
    Fuse(StageArgs),
    /// Write the merged corpora in marker format.
    Export(StageArgs),
    /// Run every stage in order.
    Run(StageArgs),
    /// Print the run manifest of an output directory.
    Status {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the built-in prompt pack to a directory for editing.
    Prompts {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Fusion mode; overrides `mode` in the config.
    #[arg(long)]
    mode: Option<RunMode>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Generation budget per strategy and cycle; overrides `budget`.
    #[arg(long)]
    budget: Option<u32>,
    /// Rerun a completed stage and invalidate everything downstream.
    #[arg(long)]
    force: bool,
    /// Rerun rating or fusion jobs that failed before.
    #[arg(long)]
    retry_failed: bool,
}

impl StageArgs {
    fn pipeline(&self) -> Result<Pipeline> {
        let mut config = PipelineConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(mode) = self.mode {
            config.mode = mode;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(budget) = self.budget {
            config.budget = budget;
        }
        Ok(Pipeline::new(config)?)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            force: self.force,
            retry_failed: self.retry_failed,
        }
    }
}

fn run_stages(args: &StageArgs, stages: &[StageName]) -> Result<()> {
    let pipeline = args.pipeline()?;
    for &stage in stages {
        let report = pipeline
            .run_stage(stage, args.options())
            .with_context(|| format!("stage {stage}"))?;
        println!("{report}");
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match &cli.command {
        Command::Rate(a) => run_stages(a, &[StageName::Rate]),
        Command::Correct(a) => run_stages(a, &[StageName::Correct]),
        Command::Split(a) => run_stages(a, &[StageName::Split]),
        Command::Select(a) => run_stages(a, &[StageName::Select]),
        Command::Fuse(a) => run_stages(a, &[StageName::Fuse]),
        Command::Export(a) => run_stages(a, &[StageName::Export]),
        Command::Run(a) => run_stages(a, &StageName::ALL),
        Command::Status { config } => {
            let config = PipelineConfig::load(config)?;
            let state = RunState::load(&config.output_dir)?;
            println!("{}", serde_json::to_string_pretty(&state)?);
            Ok(())
        }
        Command::Prompts { out } => {
            PromptPack::write_builtin(out).with_context(|| format!("writing {}", out.display()))?;
            println!("prompt pack written to {}", out.display());
            Ok(())
        }
    }
}

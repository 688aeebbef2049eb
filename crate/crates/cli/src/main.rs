//! Pipeline front end: split a corpus, mine a code table, expand with
//! generated relation instances, train the classifier, score held-out bags,
//! evaluate the ranking, and Borda-rank methods against each other.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(name = "relex", version, about = "MDL-expanded relation extraction pipeline")]
pub struct Cli {
    /// Flat key/value TOML config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step (config: seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Pin single-threaded deterministic execution. Execution is
    /// single-threaded and deterministic regardless; the flag makes the
    /// guarantee explicit in scripts.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

/// The global flags, detached from the parsed command.
#[derive(Debug, Clone, Copy)]
pub struct Globals {
    pub seed: Option<u64>,
    pub force: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Seeded train/test split at the entity-pair level.
    Split(commands::SplitArgs),
    /// Build the vocabulary and mine the MDL code table.
    Mine(commands::MineArgs),
    /// Generate relation instances from the code table.
    Expand(commands::ExpandArgs),
    /// Train the relation classifier.
    Train(commands::TrainArgs),
    /// Score a corpus with a trained checkpoint.
    Predict(commands::PredictArgs),
    /// Evaluate ranked predictions against gold facts.
    Eval(commands::EvalArgs),
    /// Borda-rank metric files against each other.
    Rank(commands::RankArgs),
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let pipeline_config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let globals = Globals { seed: cli.seed, force: cli.force };
    match cli.command {
        Command::Split(args) => commands::cmd_split(&globals, &pipeline_config, args),
        Command::Mine(args) => commands::cmd_mine(&globals, &pipeline_config, args),
        Command::Expand(args) => commands::cmd_expand(&globals, &pipeline_config, args),
        Command::Train(args) => commands::cmd_train(&globals, &pipeline_config, args),
        Command::Predict(args) => commands::cmd_predict(&globals, &pipeline_config, args),
        Command::Eval(args) => commands::cmd_eval(&globals, &pipeline_config, args),
        Command::Rank(args) => commands::cmd_rank(&globals, &pipeline_config, args),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

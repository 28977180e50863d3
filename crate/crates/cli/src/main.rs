mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "imtinet", version, about = "Train and evaluate multi-target speech intelligibility predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// key=value run configuration
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// JSON-Lines manifest (overrides `manifest` in the config)
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Model checkpoint (overrides `checkpoint` in the config)
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Seed for initialization, shuffling, synthesis and sampling (overrides `seed`)
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus (manifest, embeddings, waveforms)
    SynthData(Common),
    /// Train a model; writes the best checkpoint and a per-epoch metrics log
    Train(Common),
    /// Metrics report and scatter files over the test split
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Score an existing `id,target,prediction` CSV instead of running a checkpoint
        #[arg(long, value_name = "PATH")]
        predictions: Option<PathBuf>,
    },
    /// Utterance-level predictions for every manifest entry
    Predict(Common),
    /// Finite-difference check of the model gradient
    Gradcheck(Common),
    /// Per-target truth/prediction CSVs over the test split
    ExportScatter {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        predictions: Option<PathBuf>,
    },
}

fn parse() -> Result<Cli, clap::Error> {
    let keys = config::all_keys().join(", ");
    let cmd = Cli::command().after_long_help(format!("Config keys (key = value, one per line, # comments): {keys}"));
    Cli::from_arg_matches(&cmd.try_get_matches()?)
}

fn main() -> ExitCode {
    let cli = match parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::SynthData(c) => commands::synth_data(&c),
        Command::Train(c) => commands::train(&c),
        Command::Evaluate { common, predictions } => commands::evaluate(&common, predictions.as_deref()),
        Command::Predict(c) => commands::predict(&c),
        Command::Gradcheck(c) => commands::gradcheck(&c),
        Command::ExportScatter { common, predictions } => {
            commands::export_scatter(&common, predictions.as_deref())
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

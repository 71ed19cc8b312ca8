//! `mmsvae` — data preparation, training, critiquing and simulation.
//!
//! Exit codes: 0 ok, 1 usage, 2 validation, 3 numeric failure, 4 environment.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{
    BlenderFlags, Common, CritiqueFlags, DataFlag, EvalFlags, ModelFlag, PrepareFlags, ServeFlags, SimFlags,
    SynthFlags, TrainFlags,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
}

#[derive(Parser, Debug)]
#[command(name = "mmsvae", version, about = "Multimodal VAE recommender with positive and negative critiquing")]
struct Cli {
    /// Flat JSON file with default values for any flag (flags win).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log level filter (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted-cluster review corpus (JSONL).
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthFlags,
    },
    /// Binarize, split and index a review corpus into a dataset bundle.
    Prepare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        prepare: PrepareFlags,
    },
    /// Train a model; writes model.ckpt, loss.csv, epochs.csv and train_log.json.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlag,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Build the synthetic positive and negative critiquing datasets.
    BuildCritiques {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlag,
        #[command(flatten)]
        model: ModelFlag,
        #[command(flatten)]
        critiques: CritiqueFlags,
    },
    /// Train the critique blender on synthetic critiques; the model stays frozen.
    TrainBlender {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlag,
        #[command(flatten)]
        model: ModelFlag,
        #[command(flatten)]
        blender: BlenderFlags,
    },
    /// Ranking and explanation metrics of a model next to the popularity baseline.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlag,
        #[command(flatten)]
        model: ModelFlag,
        #[command(flatten)]
        eval: EvalFlags,
    },
    /// Simulate multi-step critiquing sessions over every test pair.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlag,
        #[command(flatten)]
        model: ModelFlag,
        #[command(flatten)]
        sim: SimFlags,
    },
    /// Align simulation results into comparison.csv and comparison.json.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Result files written by `simulate`.
        #[arg(required = true)]
        results: Vec<PathBuf>,
    },
    /// Serve interactive critiquing sessions over HTTP.
    Serve {
        #[command(flatten)]
        data: DataFlag,
        #[command(flatten)]
        model: ModelFlag,
        #[command(flatten)]
        serve: ServeFlags,
    },
}

/// Maps an error chain to the documented exit codes.
fn exit_code(err: &anyhow::Error) -> u8 {
    use mmsvae_core::Error as E;
    use mmsvae_service::ServiceError as S;
    fn core(e: &E) -> u8 {
        match e {
            E::Divergence { .. } | E::Numeric(_) => 3,
            E::Io { .. } => 4,
            _ => 2,
        }
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => 1,
                CliError::Validation(_) => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return core(e);
        }
        if let Some(e) = cause.downcast_ref::<S>() {
            return match e {
                S::Bind { .. } | S::Serve(_) => 4,
                S::Core(c) => core(c),
                S::Config(_) => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(cli.log.as_str())).init();
    match commands::run(cli.config.as_deref(), cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

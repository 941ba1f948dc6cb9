//! `fsps`: generate corpora, train the embedding network and predictor,
//! adapt to new subjects from a few scanpaths, and score predictions.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "fsps", version, about = "Few-shot personalized scanpath prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy)]
pub enum Command {
    /// Generate a synthetic corpus and its scene grids
    Gen,
    /// Partition subjects into seen and unseen, holding out query scenes
    Split,
    /// Fit duration bins on the base training set
    Bins,
    /// Train the subject embedding network
    TrainSenet,
    /// Embed support scanpaths and write prototypes
    Embed,
    /// Train the embedding-conditioned scanpath predictor
    TrainPred,
    /// Predict held-out scanpaths from prototypes
    Predict,
    /// Score predictions, or run n-shot evaluation of trained models
    Eval,
    /// Own versus other-subject prototype evaluation
    Xeval,
    /// Retrain and evaluate across values of one setting
    Ablate,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Opts {
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Scene grids; defaults to scenes.json beside the corpus
    #[arg(long, global = true)]
    pub scenes: Option<PathBuf>,
    #[arg(long, global = true)]
    pub split: Option<PathBuf>,
    #[arg(long, global = true)]
    pub bins: Option<PathBuf>,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Support size
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
    /// greedy or sample
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Embedding network checkpoint
    #[arg(long, global = true)]
    pub senet: Option<PathBuf>,
    /// Predictor checkpoint
    #[arg(long, global = true)]
    pub predictor: Option<PathBuf>,
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    pub predictions: Option<PathBuf>,
    #[arg(long, global = true)]
    pub truth: Option<PathBuf>,
    /// loss_mode, margin, bins, task_encoder or duration_mode
    #[arg(long, global = true)]
    pub sweep: Option<String>,
    /// Comma-separated sweep values
    #[arg(long, global = true)]
    pub values: Option<String>,
    #[arg(long, global = true)]
    pub m_others: Option<usize>,
    /// Comma-separated subject ids (default: unseen subjects)
    #[arg(long, global = true)]
    pub subjects: Option<String>,
    #[arg(long, global = true)]
    pub profiles: Option<PathBuf>,
    #[arg(long, global = true)]
    pub scene_count: Option<usize>,
    /// Comma-separated task names
    #[arg(long, global = true)]
    pub tasks: Option<String>,
    #[arg(long, global = true)]
    pub max_len: Option<usize>,
    #[arg(long, global = true)]
    pub unseen_fraction: Option<f64>,
}

fn thread_pool() -> CliResult<()> {
    let Ok(raw) = std::env::var("FSPS_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Usage(format!("FSPS_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

pub fn run(cli: &Cli) -> CliResult<()> {
    thread_pool()?;
    let o = &cli.opts;
    match cli.command {
        Command::Gen => commands::gen(o),
        Command::Split => commands::split(o),
        Command::Bins => commands::bins(o),
        Command::TrainSenet => commands::train_senet_cmd(o),
        Command::Embed => commands::embed(o),
        Command::TrainPred => commands::train_pred(o),
        Command::Predict => commands::predict(o),
        Command::Eval => commands::eval(o),
        Command::Xeval => commands::xeval(o),
        Command::Ablate => commands::ablate(o),
    }
}


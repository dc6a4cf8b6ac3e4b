//! Operator-facing command line: synthesize datasets, train, evaluate, run
//! ablation sweeps, and dump embeddings.
//!
//! Exit codes: 0 success, 2 usage/config error, 1 runtime failure.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "demvc",
    version,
    about = "Deep embedded multi-view clustering with collaborative training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic multi-view datasets (MVDS files)
    Synth {
        #[command(subcommand)]
        kind: SynthKind,
    },
    /// Pretrain and fine-tune on a dataset, writing a run artifact directory
    Train(TrainArgs),
    /// Print ACC/NMI/ARI (x100) and the consensus rate for a finished run
    Eval(EvalArgs),
    /// Run every ablation mode over several seeds and aggregate the metrics
    Ablate(AblateArgs),
    /// Re-embed a dataset with a run's checkpoints and write embeddings
    DumpEmbeddings(DumpArgs),
}

#[derive(Subcommand)]
enum SynthKind {
    /// Well-separated Gaussian clusters mapped into independent views
    Gaussian {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 2)]
        views: usize,
        #[arg(long, default_value_t = 4)]
        latent_dim: usize,
        /// Per-view feature dimensions; repeats the last value when fewer
        /// than --views values are given
        #[arg(long, value_delimiter = ',', default_value = "12")]
        view_dims: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extra views built by sampling same-label rows of a labeled base view
    Paired {
        /// Base dataset: an MVDS file or a CSV directory (single view,
        /// labels required)
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        views: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mask one image view with uniform 0-255 noise (truncated, rescaled)
    Noisy {
        #[arg(long)]
        input: PathBuf,
        /// 1-based view index to replace
        #[arg(long, default_value_t = 1)]
        view: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rotate one square image view by angles uniform in [-pi/4, pi/4]
    Rotated {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        view: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset: MVDS file or CSV directory
    #[arg(long)]
    data: PathBuf,
    /// Run artifact directory (created)
    #[arg(long)]
    out: PathBuf,
    /// key=value config file; command-line flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Baseline defaults: "desk" (batch 64, 50 batches/turn, 2000 iters,
    /// 100 pretrain epochs) or "paper" (256 / 200 / 20000 / 500)
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Write per-view embeddings of the trained model
    #[arg(long)]
    dump_embeddings: bool,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

/// TrainConfig fields as optional flags layered over the config file.
#[derive(Args)]
struct ConfigOverrides {
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    batches_per_turn: Option<usize>,
    /// Total fine-tuning optimizer steps
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    /// demvc, coo_setc, coo or idec_per_view
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// 1-based first referred view
    #[arg(long)]
    first_referred: Option<usize>,
    #[arg(long)]
    consensus_threshold: Option<f64>,
    /// Encoder hidden widths, comma separated (e.g. 500,500,2000)
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    embed_dim: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run artifact directory holding report.json
    #[arg(long)]
    run: PathBuf,
    /// Ground-truth source (MVDS file or CSV directory) when the run's
    /// dataset carried no labels
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Baseline defaults, as in train
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Number of seeds per mode
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// First seed of the sweep
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct DumpArgs {
    /// Run artifact directory holding view checkpoints
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Error carrying its process exit code.
pub(crate) enum CliError {
    /// Bad arguments, unreadable inputs, invalid configuration.
    Usage(String),
    /// Failure during execution.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

pub(crate) fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub(crate) fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("DEMVC_THREADS") {
        match threads.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => {
                eprintln!("error: DEMVC_THREADS must be a positive integer, got '{threads}'");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { kind } => commands::synth(kind),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Ablate(args) => commands::ablate(args),
        Command::DumpEmbeddings(args) => commands::dump_embeddings(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

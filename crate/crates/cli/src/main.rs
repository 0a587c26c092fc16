//! `fpclass <generate|train|eval|robustness>`.
//!
//! Exit codes: 0 success, 1 usage, 2 data or parse error, 3 internal error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fpclass_core::synthgen::{ClassDistribution, Quality};
use fpclass_core::Error;

#[derive(Parser, Debug)]
#[command(name = "fpclass", version, about = "Fingerprint classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset (manifest.csv + PGM images).
    Generate(GenerateArgs),
    /// Train a network and write a checkpoint and a loss trace.
    Train(TrainArgs),
    /// Cross-validate, or evaluate a saved model.
    Eval(EvalArgs),
    /// Template-relabelling robustness run: impression 1 trains, the rest test.
    Robustness(RobustnessArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    fingers: usize,
    #[arg(long, default_value_t = 1)]
    impressions: u32,
    #[arg(long, default_value = "hq")]
    quality: Quality,
    /// Skip all impression perturbations.
    #[arg(long)]
    no_perturbation: bool,
    #[arg(long, default_value = "natural")]
    distribution: ClassDistribution,
    #[arg(long, value_enum, default_value_t = ImageSize::Full)]
    size: ImageSize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ImageSize {
    /// 288x384.
    Full,
    /// 96x128.
    Desk,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Net {
    Caffenet,
    Proposed,
}

/// Network and SGD settings; unset values take the defaults of the chosen network.
#[derive(Args, Debug, Clone)]
struct NetArgs {
    #[arg(long, value_enum, default_value_t = Net::Proposed)]
    net: Net,
    /// Channel and unit multiplier.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Network input as HxW (e.g. 227x227); defaults to the dataset image size.
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Learning-rate step in iterations; scaled with --iters when unset.
    #[arg(long)]
    step: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Loss trace CSV; defaults to the checkpoint path with `.loss.csv` appended.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ClassifierKind {
    Cnn,
    Knn,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of cross-validation folds.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    cv: Option<usize>,
    /// Saved checkpoint to evaluate.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ClassifierKind::Cnn)]
    classifier: ClassifierKind,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Report prefix: also writes PREFIX.txt and PREFIX.csv (the report always goes to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RobustnessArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = ClassifierKind::Cnn)]
    classifier: ClassifierKind,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Use manual labels instead of relabeled classes for penetration priors.
    #[arg(long)]
    manual_priors: bool,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Report prefix, as for `eval`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// k-NN only: write the extracted feature vectors here.
    #[arg(long)]
    features_csv: Option<PathBuf>,
}

/// Errors carry their exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(e) => match e {
                Error::InvalidArgument(_) | Error::Config(_) | Error::Topology { .. } => 1,
                Error::Parse { .. }
                | Error::Io { .. }
                | Error::Image { .. }
                | Error::BadMagic
                | Error::VersionMismatch { .. }
                | Error::TruncatedBlob(_)
                | Error::WeightLengthMismatch { .. }
                | Error::Stratification(_)
                | Error::Protocol(_) => 2,
                Error::InvalidShape(_) | Error::Shape(_) | Error::State(_) => 3,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("FPCLASS_THREADS") else {
        return Ok(());
    };
    let n: usize =
        v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Failure::Usage(format!("FPCLASS_THREADS must be a positive integer, got {v:?}"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot size thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Robustness(a) => commands::robustness(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fpclass: {f}");
            ExitCode::from(f.code())
        }
    }
}

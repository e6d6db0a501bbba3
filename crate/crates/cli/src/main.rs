//! `dustbin`: train dustbin-augmented classifiers, craft adversaries and run
//! the evaluation suites from the command line.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const SUBCOMMANDS: &[&str] = &[
    "train",
    "attack",
    "eval-blackbox",
    "eval-whitebox",
    "features",
    "moons",
    "gradcheck",
];

#[derive(Parser, Debug)]
#[command(name = "dustbin", version, about, args_override_self = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Global {
    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for evaluation and attack stages (1 = deterministic).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Root of the default dataset layout (mnist/, notmnist/).
    #[arg(long, global = true, default_value = "data")]
    pub data_dir: PathBuf,
    /// Scalar precision of models and datasets.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    /// Flat key = value file with option defaults.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a victim (naive or augmented) or generator CNN on MNIST-format data.
    Train(TrainArgs),
    /// Craft FGS or T-FGS adversaries for a test set.
    Attack(AttackArgs),
    /// Black-box transfer suite: generator adversaries against both victims.
    EvalBlackbox(BlackboxArgs),
    /// White-box suite: each victim attacked with its own gradients.
    EvalWhitebox(WhiteboxArgs),
    /// Feature-space point cloud, PCA model and separation scores.
    Features(FeaturesArgs),
    /// Two-moons toy: naive vs augmented MLP decision regions.
    Moons(MoonsArgs),
    /// Finite-difference gradient checks over every op kind.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TestData {
    /// Test images (IDX); defaults to the MNIST test set under --data-dir.
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    /// Use only the first N test samples.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct OutDist {
    /// Out-distribution images (IDX); defaults to NotMNIST under --data-dir.
    #[arg(long)]
    pub outdist_images: Option<PathBuf>,
    /// Samples drawn for augmentation; the remainder is held out.
    #[arg(long, default_value_t = 10_000)]
    pub n_out: usize,
    /// Seed of the augmentation / held-out split.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Victim,
    Generator,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Arch::Victim)]
    pub arch: Arch,
    #[arg(long)]
    pub train_images: Option<PathBuf>,
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    /// Out-distribution images appended as dustbin samples (augmented victim).
    #[arg(long)]
    pub augment: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub n_out: usize,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Use only the first N in-distribution training samples.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr_decay: f64,
    /// Fraction of the epochs after which the learning rate decays.
    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub decay_at: f64,
    /// Root seed for initialization, shuffling and dropout.
    #[arg(long)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "fgs")]
    pub kind: String,
    #[arg(long, default_value_t = 0.2)]
    pub eps: f64,
    #[arg(long, default_value_t = 1)]
    pub iters: usize,
    /// Exclude the dustbin class from T-FGS targets.
    #[arg(long)]
    pub forbid_dustbin: bool,
    /// Do not clip adversaries to [0,1].
    #[arg(long)]
    pub no_clip: bool,
    #[command(flatten)]
    pub test: TestData,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BlackboxArgs {
    #[arg(long)]
    pub generator: PathBuf,
    #[arg(long)]
    pub naive: PathBuf,
    #[arg(long)]
    pub augmented: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub eps: f64,
    #[command(flatten)]
    pub test: TestData,
    #[command(flatten)]
    pub outdist: OutDist,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct WhiteboxArgs {
    #[arg(long)]
    pub naive: PathBuf,
    #[arg(long)]
    pub augmented: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub eps: f64,
    #[arg(long, default_value_t = 2)]
    pub iters: usize,
    #[command(flatten)]
    pub test: TestData,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Generator crafting single-step FGS and T-FGS sets.
    #[arg(long)]
    pub generator: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub eps: f64,
    #[command(flatten)]
    pub test: TestData,
    #[command(flatten)]
    pub outdist: OutDist,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MoonsArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 1000)]
    pub n_out: usize,
    #[arg(long, default_value_t = 0.3)]
    pub radius: f64,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Decision-region raster resolution per axis.
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GradcheckArgs {
    /// Random shapes per op kind.
    #[arg(long, default_value_t = 20)]
    pub cases: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().collect();
    let args = match config::expand_args(raw, SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

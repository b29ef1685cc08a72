//! `drkn`: bound verification for fold networks and the SVM -> DRKN pipeline.

mod commands;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::io::DataArgs;

#[derive(Parser, Debug)]
#[command(name = "drkn", version, about = "Fold-network bounds and deep radial kernel networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Build deep and 3-layer networks for every (d, delta) pair and audit them.
    VerifyBounds(VerifyBoundsArgs),
    /// Train a one-vs-rest Gaussian SVM with SMO on the train split.
    TrainSvm(TrainSvmArgs),
    /// Assemble a DRKN from an SVM model.
    BuildDrkn(BuildDrknArgs),
    /// Assemble the Gaussian RBF-network baseline from an SVM model.
    BuildRbf(BuildRbfArgs),
    /// Fine-tune a DRKN or RBF model with SGD; writes the model and history CSV.
    TrainDrkn(TrainDrknArgs),
    /// Accuracy, per-class errors and optional agreement with a reference model.
    Eval(EvalArgs),
    /// Merge history files into one curves CSV.
    ExportCurves(ExportCurvesArgs),
    /// Write a synthetic dataset as CSV.
    Synth(SynthArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::VerifyBounds(_) => "verify-bounds",
            Command::TrainSvm(_) => "train-svm",
            Command::BuildDrkn(_) => "build-drkn",
            Command::BuildRbf(_) => "build-rbf",
            Command::TrainDrkn(_) => "train-drkn",
            Command::Eval(_) => "eval",
            Command::ExportCurves(_) => "export-curves",
            Command::Synth(_) => "synth",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ProfileId {
    /// f(x) = ||x|| (deep network only).
    Norm,
    /// Wendland Q_{3,1} with support R.
    Wendland,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum NetworkKind {
    Deep,
    ThreeLayer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SharingArg {
    None,
    Stage,
    Full,
}

#[derive(Args, Debug, Serialize)]
struct VerifyBoundsArgs {
    /// Input dimensions, comma separated.
    #[arg(long = "d", value_delimiter = ',', required = true, num_args = 1..)]
    dims: Vec<usize>,
    /// Radius of the input ball.
    #[arg(long = "R", default_value_t = 1.0)]
    radius: f64,
    /// Accuracies, comma separated.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    delta: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ProfileId::Wendland)]
    profile: ProfileId,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [NetworkKind::Deep, NetworkKind::ThreeLayer])]
    networks: Vec<NetworkKind>,
    #[arg(long, value_enum, default_value_t = SharingArg::Stage)]
    sharing: SharingArg,
    /// Monte-Carlo audit points per network.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write every network as JSON into this directory.
    #[arg(long)]
    emit_networks: Option<PathBuf>,
    /// CSV report.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TrainSvmArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long = "C", default_value_t = 1.0)]
    c: f64,
    /// Gaussian width; defaults to 1/d.
    #[arg(long)]
    gamma: Option<f64>,
    /// SMO stopping tolerance on the maximal violating pair.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Seed of the train/test split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct BuildDrknArgs {
    /// SVM model (JSON or libsvm model file).
    #[arg(long)]
    model: PathBuf,
    /// Fold-network accuracy; defaults to 0.01 / max class alpha mass, clamped to [1e-4, 0.05].
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct BuildRbfArgs {
    /// SVM model (JSON or libsvm model file).
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum LossArg {
    /// Softmax cross-entropy on the squashed outputs.
    Outputs,
    /// Softmax cross-entropy on the raw scores.
    Scores,
}

#[derive(Args, Debug, Serialize)]
struct TrainDrknArgs {
    /// DRKN or RBF model JSON.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Outputs)]
    loss: LossArg,
    /// Accept batch sizes outside 10..=100.
    #[arg(long)]
    any_batch: bool,
    /// Seed of the split and of the per-epoch shuffles.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// SVM whose test error is recorded alongside the curves.
    #[arg(long)]
    svm: Option<PathBuf>,
    /// Trained model JSON.
    #[arg(long)]
    out: PathBuf,
    /// History CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum RowsArg {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum KernelArg {
    Gaussian,
    /// Wendland Q_{3,1} fitted to the SVM's Gaussian width.
    Wendland,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// Any model: SVM JSON, libsvm model, DRKN or RBF JSON.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = RowsArg::Test)]
    rows: RowsArg,
    /// Seed of the split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model whose decisions are compared against.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Kernel used when the reference is an SVM.
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    reference_kernel: KernelArg,
    /// Metrics JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ExportCurvesArgs {
    /// History CSV files written by train-drkn.
    #[arg(long, required = true, num_args = 1..)]
    history: Vec<PathBuf>,
    /// Column prefix per history file; defaults to the file stems.
    #[arg(long, value_delimiter = ',')]
    names: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SynthKind {
    /// Class 0 in the unit disc, class 1 in the annulus 1.5 <= r <= 2.5 (d = 2).
    Annulus,
    /// Gaussian blobs centred on distinct axes.
    Blobs,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(value_enum)]
    kind: SynthKind,
    #[arg(long, default_value_t = 600)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 4.0)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ReplayArgs {
    manifest: PathBuf,
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match commands::run(cli.command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

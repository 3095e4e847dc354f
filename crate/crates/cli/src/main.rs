//! `tfln` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on runtime
//! failures. Results go to standard output (or `--output`), diagnostics to
//! standard error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use tfln::distributed::{SyncMode, TransportKind};

#[derive(Debug, Parser)]
#[command(name = "tfln", version, about = "Train, evaluate and serve estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a canned estimator from a run configuration.
    Train(TrainArgs),
    /// Evaluate an exported model on a labelled CSV.
    Evaluate(DataArgs),
    /// Write one prediction row per input row.
    Predict(PredictArgs),
    /// Copy a trained model into an export directory.
    Export(Common),
    /// Train the [10,20,10] DNN classifier on the bundled iris data and report test metrics.
    DemoIris(Common),
    /// List a checkpoint's global step and tensors.
    InspectCkpt(InspectArgs),
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Run configuration (JSON). Falls back to TFLN_CONFIG.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Sync,
    Async,
}

impl From<ModeArg> for SyncMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sync => SyncMode::Sync,
            ModeArg::Async => SyncMode::Async,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Dnn,
    Linear,
    Logistic,
    LinearRegressor,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TransportArg {
    InProcess,
    Tcp,
}

impl From<TransportArg> for TransportKind {
    fn from(t: TransportArg) -> Self {
        match t {
            TransportArg::InProcess => TransportKind::InProcess,
            TransportArg::Tcp => TransportKind::Tcp,
        }
    }
}

#[derive(Debug, Clone, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Labelled training CSV; defaults to the training split of the bundled iris data.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Labelled evaluation CSV; defaults to the iris test split, or to --data.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dnn")]
    model: ModelArg,
    #[arg(long, value_delimiter = ',', default_value = "10,20,10")]
    hidden_units: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    n_classes: usize,
    #[arg(long, value_enum, default_value = "in-process")]
    transport: TransportArg,
}

#[derive(Debug, Clone, Args)]
struct DataArgs {
    #[command(flatten)]
    common: Common,
    /// Labelled CSV; defaults to the iris test split.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    /// Feature CSV with a header; a trailing label column is ignored.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct InspectArgs {
    /// Checkpoint file, or a directory whose newest checkpoint is listed.
    path: PathBuf,
}

/// Why a command failed.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(tfln::Error),
}

impl From<tfln::Error> for Failure {
    fn from(e: tfln::Error) -> Self {
        Failure::Run(e)
    }
}

fn usage() -> String {
    Cli::command().render_usage().to_string()
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
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", usage());
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}

//! `bdnn` — train binary-activation networks by integer programming.

mod commands;
mod experiments;
mod results;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bdnn", version, about = "Training of binary-activation networks: exact MILP, local search, robust counterpart", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random block-structured dataset as CSV.
    GenData(GenDataArgs),
    /// Train a model and write its document.
    Train(TrainArgs),
    /// Evaluate a model document on a labeled CSV.
    Evaluate(EvaluateArgs),
    /// Predict labels for feature rows.
    Predict(PredictArgs),
    /// Write the exact training MILP as free MPS.
    ExportMps(ExportMpsArgs),
    /// Run an experiment grid and collect a results CSV.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Train the ReLU/softmax comparison network.
    Baseline(BaselineArgs),
    /// Solve a free-MPS model with the built-in solver and write a solution
    /// listing; this is the endpoint an external-solver command template can
    /// point at.
    SolveMps(SolveMpsArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Exact,
    Heuristic,
    Robust,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LambdaArg {
    Trainable,
    Zero,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WeightsArg {
    Box,
    Binary,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Builtin,
    External,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NormArg {
    Linf,
    L1,
}

#[derive(Args)]
struct GenDataArgs {
    /// Feature dimension.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Number of points.
    #[arg(long, default_value_t = 200)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Hidden-layer width d1; 0 trains a single threshold layer.
    #[arg(long, default_value_t = 0)]
    hidden: usize,
    #[arg(long, value_enum, default_value = "trainable")]
    lambda: LambdaArg,
    #[arg(long, value_enum, default_value = "box")]
    weights: WeightsArg,
    /// Slack replacing strict inequalities.
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// Per-layer cap on nonzero weights.
    #[arg(long)]
    sparsity: Option<usize>,
    /// Wall-clock limit in seconds for the whole solve.
    #[arg(long, default_value_t = 600.0)]
    time_limit: f64,
    #[arg(long, value_enum, default_value = "builtin")]
    solver: SolverArg,
    /// External solver template with {model} and {solution} placeholders;
    /// falls back to $BDNN_SOLVER_CMD.
    #[arg(long)]
    solver_cmd: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training CSV (headered, 0/1 `label` column).
    #[arg(long)]
    train: std::path::PathBuf,
    /// Name of the label column.
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Where to write the model document.
    #[arg(long)]
    model_out: std::path::PathBuf,
    /// Optional testing CSV; metrics in the results row refer to it.
    #[arg(long)]
    eval: Option<std::path::PathBuf>,
    /// Append a machine-readable results row here.
    #[arg(long)]
    results: Option<std::path::PathBuf>,
    /// Heuristic: random restarts.
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    /// Heuristic: iteration cap per restart.
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    /// Heuristic: write the search trace CSV here.
    #[arg(long)]
    trace_out: Option<std::path::PathBuf>,
    /// Robust: uniform perturbation radius.
    #[arg(long, default_value_t = 0.1)]
    radius: f64,
    /// Robust: perturbation norm (l2 is not supported).
    #[arg(long, value_enum, default_value = "linf")]
    norm: NormArg,
    /// Robust: iteration cap of the scenario loop.
    #[arg(long, default_value_t = 25)]
    ccg_iters: usize,
    /// Robust: write the bound log CSV here.
    #[arg(long)]
    ccg_log_out: Option<std::path::PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: std::path::PathBuf,
    /// Labeled CSV.
    #[arg(long)]
    data: std::path::PathBuf,
    #[arg(long, default_value = "label")]
    label_column: String,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: std::path::PathBuf,
    /// CSV of feature rows (a `label` column, if present, is ignored).
    #[arg(long)]
    input: std::path::PathBuf,
}

#[derive(Args)]
struct ExportMpsArgs {
    #[arg(long)]
    train: std::path::PathBuf,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, default_value_t = 0)]
    hidden: usize,
    #[arg(long, value_enum, default_value = "trainable")]
    lambda: LambdaArg,
    #[arg(long, value_enum, default_value = "box")]
    weights: WeightsArg,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long)]
    sparsity: Option<usize>,
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Random-data grid: sizes x widths x trials, all methods.
    Random(experiments::RandomArgs),
    /// Breast Cancer Wisconsin protocol over data shuffles.
    Bcw(experiments::BcwArgs),
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    train: std::path::PathBuf,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, default_value_t = 25)]
    hidden: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    model_out: std::path::PathBuf,
    #[arg(long)]
    eval: Option<std::path::PathBuf>,
    #[arg(long)]
    results: Option<std::path::PathBuf>,
}

#[derive(Args)]
struct SolveMpsArgs {
    /// Free-MPS model file.
    model: std::path::PathBuf,
    /// Where to write the solution listing.
    out: std::path::PathBuf,
    #[arg(long, default_value_t = 600.0)]
    time_limit: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Exit codes: 2 configuration, 3 infeasible, 4 limits exhausted, 1 other.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    use bdnn::Error as E;
    if let Some(e) = err.downcast_ref::<E>() {
        return match e {
            E::InvalidArchitecture(_)
            | E::InvalidModel(_)
            | E::InvalidDataset(_)
            | E::Build(_)
            | E::Document(_)
            | E::BoundViolation { .. }
            | E::DataFile(_)
            | E::InvalidProblem(_)
            | E::UnsupportedNorm(_)
            | E::MissingExecutable(_)
            | E::DimensionMismatch { .. }
            | E::Csv(_) => 2,
            E::NotFeasible(_) | E::AllRestartsInfeasible { .. } => 3,
            _ => 1,
        };
    }
    if err.downcast_ref::<commands::LimitsExhausted>().is_some() {
        return 4;
    }
    if err.downcast_ref::<commands::ConfigError>().is_some() {
        return 2;
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Predict(a) => commands::predict(a),
        Command::ExportMps(a) => commands::export_mps(a),
        Command::Experiment(ExperimentCommand::Random(a)) => experiments::random(a),
        Command::Experiment(ExperimentCommand::Bcw(a)) => experiments::bcw(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::SolveMps(a) => commands::solve_mps(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

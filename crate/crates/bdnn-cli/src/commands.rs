//! Implementations of the non-experiment subcommands.

use std::time::{Duration, Instant};

use anyhow::Context;

use bdnn::baseline::{mlp_predict, mlp_predictions, mlp_train, MlpTrainConfig};
use bdnn::data;
use bdnn::document::{self, ModelMeta};
use bdnn::heuristic::local_search;
use bdnn::milp::{build_nominal, BuildOptions};
use bdnn::robust::{ccg_train, CcgLimits, UncertaintyNorm, UncertaintySpec};
use bdnn::solver::{self, mps, ExternalSolver, SolveStatus, SolverConfig};
use bdnn::trainer::{train_exact, SolverRoute};
use bdnn::{evaluate_metrics, Architecture, BdnnModel, Dataset, LambdaMode, Metrics, WeightDomain};

use crate::results::{append_rows, ResultsRow};
use crate::{
    BaselineArgs, EvaluateArgs, ExportMpsArgs, GenDataArgs, LambdaArg, MethodArg, NormArg,
    PredictArgs, SolveMpsArgs, SolverArg, TrainArgs, WeightsArg,
};

/// Marker error: the run hit its time/node budget (exit code 4).
#[derive(Debug)]
pub struct LimitsExhausted(pub String);

impl std::fmt::Display for LimitsExhausted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "limits exhausted: {}", self.0)
    }
}
impl std::error::Error for LimitsExhausted {}

/// Marker error: inconsistent flags (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}
impl std::error::Error for ConfigError {}

pub fn dims_for(n: usize, hidden: usize) -> Vec<usize> {
    if hidden == 0 {
        vec![n, 1]
    } else {
        vec![n, hidden, 1]
    }
}

fn lambda_mode(arg: LambdaArg) -> LambdaMode {
    match arg {
        LambdaArg::Trainable => LambdaMode::Trainable,
        LambdaArg::Zero => LambdaMode::FixedZero,
    }
}

fn weight_domain(arg: WeightsArg) -> WeightDomain {
    match arg {
        WeightsArg::Box => WeightDomain::ContinuousBox,
        WeightsArg::Binary => WeightDomain::Binary,
    }
}

pub fn solver_config(time_limit_secs: f64, seed: u64) -> SolverConfig {
    SolverConfig {
        time_limit: Duration::from_secs_f64(time_limit_secs.max(0.001)),
        seed,
        ..SolverConfig::default()
    }
}

pub fn solver_route(arg: SolverArg, cmd: Option<&str>) -> anyhow::Result<SolverRoute> {
    match arg {
        SolverArg::Builtin => Ok(SolverRoute::Builtin),
        SolverArg::External => {
            let ext = match cmd {
                Some(t) => ExternalSolver::new(t)?,
                None => ExternalSolver::from_env()?,
            };
            Ok(SolverRoute::External(ext))
        }
    }
}

pub fn gen_data(args: GenDataArgs) -> anyhow::Result<()> {
    let dataset = data::generate_random(args.n, args.m, args.seed)?;
    data::write_csv(&dataset, &args.out)?;
    println!("wrote {} points of dimension {} to {}", args.m, args.n, args.out.display());
    Ok(())
}

fn metrics_for_model(model: &BdnnModel, data: &Dataset) -> anyhow::Result<Metrics> {
    let preds = model.predictions(data)?;
    Ok(evaluate_metrics(&preds, data.labels())?)
}

pub fn train(args: TrainArgs) -> anyhow::Result<()> {
    if matches!(args.method, MethodArg::Robust) && matches!(args.weights, WeightsArg::Binary) {
        return Err(ConfigError("robust training with binary weights is not supported".into()).into());
    }
    let train_data = data::load_csv(&args.train, &args.label_column)
        .with_context(|| format!("loading {}", args.train.display()))?;
    let eval_data = match &args.eval {
        Some(p) => Some(data::load_csv(p, &args.label_column)?),
        None => None,
    };
    let arch = Architecture::new(
        dims_for(train_data.dim(), args.hidden),
        weight_domain(args.weights),
        lambda_mode(args.lambda),
    )?;
    let opts = BuildOptions { epsilon: args.epsilon, sparsity_limit: args.sparsity };
    let config = solver_config(args.time_limit, args.seed);
    let route = solver_route(args.solver, args.solver_cmd.as_deref())?;

    let started = Instant::now();
    let method_name;
    let (model, objective, best_bound, gap, status) = match args.method {
        MethodArg::Exact => {
            method_name = "exact";
            let out = train_exact(&train_data, &arch, &opts, &config, &route)?;
            (
                out.model,
                out.solution.objective,
                Some(out.solution.best_bound),
                out.solution.gap_percent,
                out.solution.status.to_string(),
            )
        }
        MethodArg::Heuristic => {
            method_name = "heuristic";
            let (model, trace) = local_search(
                &train_data,
                &arch,
                &opts,
                route.as_milp_solve(),
                &config,
                args.seed,
                args.restarts,
                args.max_iters,
            )?;
            if let Some(path) = &args.trace_out {
                std::fs::write(path, trace.to_csv())?;
            }
            (model, trace.final_objective, None, None, "feasible".to_string())
        }
        MethodArg::Robust => {
            method_name = "robust";
            let norm = match args.norm {
                NormArg::Linf => UncertaintyNorm::Linf,
                NormArg::L1 => UncertaintyNorm::L1,
            };
            let spec = UncertaintySpec::uniform(norm, args.radius, train_data.len())?;
            let limits = CcgLimits {
                max_iterations: args.ccg_iters,
                time_limit: config.time_limit,
            };
            let (model, state) = ccg_train(&train_data, &arch, &spec, &opts, &config, &limits)?;
            if let Some(path) = &args.ccg_log_out {
                std::fs::write(path, state.to_csv())?;
            }
            let status = if state.converged { "optimal" } else { "time_limit" };
            (
                model,
                Some(state.upper_bound),
                Some(state.lower_bound),
                Some(
                    100.0 * (state.upper_bound - state.lower_bound)
                        / state.upper_bound.abs().max(1e-9),
                ),
                status.to_string(),
            )
        }
    };
    let wall = started.elapsed().as_secs_f64();

    let meta = ModelMeta { method: method_name.to_string(), seed: args.seed, epsilon: args.epsilon };
    std::fs::write(&args.model_out, document::serialize_model(&model, &meta))?;

    let metric_data = eval_data.as_ref().unwrap_or(&train_data);
    let metrics = metrics_for_model(&model, metric_data)?;
    println!(
        "method {method_name}: objective {} status {status} wall {wall:.2}s accuracy {:.4}",
        objective.map_or_else(|| "-".into(), |o| format!("{o}")),
        metrics.accuracy
    );

    if let Some(path) = &args.results {
        append_rows(
            path,
            &[ResultsRow {
                command: "train".into(),
                method: method_name.into(),
                d1: args.hidden,
                m: train_data.len(),
                n: train_data.dim(),
                seed: args.seed,
                epsilon: args.epsilon,
                objective,
                best_bound,
                gap_percent: gap,
                status: status.clone(),
                wall_secs: wall,
                metrics: Some(metrics),
            }],
        )?;
    }

    if matches!(status.as_str(), "time_limit" | "node_limit") {
        return Err(LimitsExhausted(format!("training stopped with status {status}")).into());
    }
    Ok(())
}

fn print_metrics(m: &Metrics) {
    println!("accuracy {:.6}", m.accuracy);
    println!("precision {:.6}", m.precision);
    println!("recall {:.6}", m.recall);
    println!("f1 {:.6}", m.f1);
    println!("macro_precision {:.6}", m.macro_precision);
    println!("macro_recall {:.6}", m.macro_recall);
    println!("macro_f1 {:.6}", m.macro_f1);
}

pub fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let dataset = data::load_csv(&args.data, &args.label_column)?;
    let text = std::fs::read_to_string(&args.model)?;
    let preds = match document::document_kind(&text)?.as_str() {
        "relu-mlp" => {
            let (model, _) = document::deserialize_mlp(&text)?;
            mlp_predictions(&model, &dataset)?
        }
        _ => {
            let (model, _) = document::deserialize_model(&text)?;
            model.predictions(&dataset)?
        }
    };
    let metrics = evaluate_metrics(&preds, dataset.labels())?;
    print_metrics(&metrics);
    Ok(())
}

/// Feature rows from a CSV, tolerating (and dropping) a `label` column.
fn load_feature_rows(path: &std::path::Path) -> anyhow::Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| ConfigError("empty input file".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    let label_idx = columns.iter().position(|c| c.trim() == "label");
    let mut rows = Vec::new();
    for (no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (i, cell) in line.split(',').enumerate() {
            if Some(i) == label_idx {
                continue;
            }
            row.push(cell.trim().parse::<f64>().map_err(|_| {
                ConfigError(format!("row {}: `{cell}` is not numeric", no + 2))
            })?);
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn predict(args: PredictArgs) -> anyhow::Result<()> {
    let rows = load_feature_rows(&args.input)?;
    let text = std::fs::read_to_string(&args.model)?;
    match document::document_kind(&text)?.as_str() {
        "relu-mlp" => {
            let (model, _) = document::deserialize_mlp(&text)?;
            for row in &rows {
                let (class, probs) = mlp_predict(&model, row)?;
                println!("{class} {:.6} {:.6}", probs[0], probs[1]);
            }
        }
        _ => {
            let (model, _) = document::deserialize_model(&text)?;
            for row in &rows {
                println!("{}", model.predict(row)?);
            }
        }
    }
    Ok(())
}

pub fn export_mps(args: ExportMpsArgs) -> anyhow::Result<()> {
    let dataset = data::load_csv(&args.train, &args.label_column)?;
    let arch = Architecture::new(
        dims_for(dataset.dim(), args.hidden),
        weight_domain(args.weights),
        lambda_mode(args.lambda),
    )?;
    let opts = BuildOptions { epsilon: args.epsilon, sparsity_limit: args.sparsity };
    let built = build_nominal(&dataset, &arch, &opts)?;
    std::fs::write(&args.out, mps::write_mps(&built.problem))?;
    println!(
        "wrote MILP with {} variables / {} constraints to {}",
        built.problem.num_variables(),
        built.problem.num_constraints(),
        args.out.display()
    );
    Ok(())
}

pub fn baseline(args: BaselineArgs) -> anyhow::Result<()> {
    let train_data = data::load_csv(&args.train, &args.label_column)?;
    let cfg = MlpTrainConfig {
        hidden: args.hidden,
        epochs: args.epochs,
        lr: args.lr,
        momentum: args.momentum,
        batch_size: args.batch,
        seed: args.seed,
    };
    let started = Instant::now();
    let (model, curve) = mlp_train(&train_data, &cfg)?;
    let wall = started.elapsed().as_secs_f64();
    let meta = ModelMeta { method: "baseline".into(), seed: args.seed, epsilon: 0.0 };
    std::fs::write(&args.model_out, document::serialize_mlp(&model, &meta))?;

    let eval_data = match &args.eval {
        Some(p) => data::load_csv(p, &args.label_column)?,
        None => train_data.clone(),
    };
    let preds = mlp_predictions(&model, &eval_data)?;
    let metrics = evaluate_metrics(&preds, eval_data.labels())?;
    println!(
        "baseline: final loss {} accuracy {:.4} wall {wall:.2}s",
        curve.last().map_or_else(|| "-".into(), |l| format!("{l:.6}")),
        metrics.accuracy
    );
    if let Some(path) = &args.results {
        append_rows(
            path,
            &[ResultsRow {
                command: "baseline".into(),
                method: "baseline".into(),
                d1: args.hidden,
                m: train_data.len(),
                n: train_data.dim(),
                seed: args.seed,
                epsilon: 0.0,
                objective: curve.last().copied(),
                best_bound: None,
                gap_percent: None,
                status: "trained".into(),
                wall_secs: wall,
                metrics: Some(metrics),
            }],
        )?;
    }
    Ok(())
}

pub fn solve_mps(args: SolveMpsArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.model)?;
    let problem = mps::parse_mps(&text)?;
    let config = solver_config(args.time_limit, args.seed);
    let solution = solver::solve(&problem, &config)?;
    std::fs::write(&args.out, solver::external::format_solution_listing(&problem, &solution))?;
    println!(
        "status {} objective {} nodes {}",
        solution.status,
        solution.objective.map_or_else(|| "-".into(), |o| format!("{o}")),
        solution.stats.nodes
    );
    if matches!(solution.status, SolveStatus::TimeLimit | SolveStatus::NodeLimit) {
        return Err(LimitsExhausted("solve stopped at a limit".into()).into());
    }
    Ok(())
}

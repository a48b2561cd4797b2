//! Experiment grids writing plot-ready results CSVs.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use clap::Args;
use rayon::prelude::*;

use bdnn::baseline::{mlp_predictions, mlp_train, MlpTrainConfig};
use bdnn::data;
use bdnn::heuristic::local_search;
use bdnn::milp::BuildOptions;
use bdnn::trainer::{train_exact, SolverRoute};
use bdnn::{evaluate_metrics, Architecture, Dataset, LambdaMode, Metrics, WeightDomain};

use crate::commands::{dims_for, solver_config, solver_route};
use crate::results::{append_rows, ResultsRow};
use crate::SolverArg;

#[derive(Args)]
pub struct RandomArgs {
    /// Comma-separated dataset sizes (points before the train/test split).
    #[arg(long, default_value = "60,120,200")]
    sizes: String,
    /// Comma-separated hidden widths to sweep.
    #[arg(long, default_value = "20,50,100")]
    hidden: String,
    /// Trials (independent datasets) per cell.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Feature dimension of the generated data.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Per-training-run wall clock budget in seconds.
    #[arg(long, default_value_t = 600.0)]
    time_limit: f64,
    /// Subset of exact,heuristic,baseline.
    #[arg(long, default_value = "exact,heuristic,baseline")]
    methods: String,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct BcwArgs {
    /// Original-layout data file (id, 9 attributes, class 2/4, `?` missing).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "25,50")]
    hidden: String,
    /// Number of random shuffles to average over.
    #[arg(long, default_value_t = 10)]
    shuffles: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 1800.0)]
    time_limit: f64,
    /// Subset of exact,exact-zero,heuristic,heuristic-zero,baseline.
    #[arg(long, default_value = "exact,exact-zero,heuristic,heuristic-zero,baseline")]
    methods: String,
    #[arg(long, value_enum, default_value = "builtin")]
    solver: SolverArg,
    #[arg(long)]
    solver_cmd: Option<String>,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_list(text: &str, what: &str) -> anyhow::Result<Vec<usize>> {
    text.split(',')
        .map(|t| t.trim().parse::<usize>().with_context(|| format!("bad {what} entry `{t}`")))
        .collect()
}

struct Job {
    method: String,
    hidden: usize,
    seed: u64,
    train: Dataset,
    test: Dataset,
}

fn run_job(
    job: &Job,
    command: &str,
    epsilon: f64,
    time_limit: f64,
    route: &SolverRoute,
) -> anyhow::Result<ResultsRow> {
    let started = Instant::now();
    let lambda = if job.method.ends_with("-zero") { LambdaMode::FixedZero } else { LambdaMode::Trainable };
    let opts = BuildOptions { epsilon, sparsity_limit: None };
    let config = solver_config(time_limit, job.seed);

    let (objective, best_bound, gap, status, metrics): (
        Option<f64>,
        Option<f64>,
        Option<f64>,
        String,
        Metrics,
    ) = if job.method == "baseline" {
        let cfg = MlpTrainConfig { hidden: job.hidden.max(1), seed: job.seed, ..Default::default() };
        let (model, curve) = mlp_train(&job.train, &cfg)?;
        let preds = mlp_predictions(&model, &job.test)?;
        let metrics = evaluate_metrics(&preds, job.test.labels())?;
        (curve.last().copied(), None, None, "trained".into(), metrics)
    } else {
        let arch = Architecture::new(
            dims_for(job.train.dim(), job.hidden),
            WeightDomain::ContinuousBox,
            lambda,
        )?;
        if job.method.starts_with("exact") {
            let out = train_exact(&job.train, &arch, &opts, &config, route)?;
            let preds = out.model.predictions(&job.test)?;
            let metrics = evaluate_metrics(&preds, job.test.labels())?;
            (
                out.solution.objective,
                Some(out.solution.best_bound),
                out.solution.gap_percent,
                out.solution.status.to_string(),
                metrics,
            )
        } else {
            let (model, trace) = local_search(
                &job.train,
                &arch,
                &opts,
                route.as_milp_solve(),
                &config,
                job.seed,
                5,
                50,
            )?;
            let preds = model.predictions(&job.test)?;
            let metrics = evaluate_metrics(&preds, job.test.labels())?;
            (trace.final_objective, None, None, "feasible".into(), metrics)
        }
    };

    Ok(ResultsRow {
        command: command.into(),
        method: job.method.clone(),
        d1: job.hidden,
        m: job.train.len(),
        n: job.train.dim(),
        seed: job.seed,
        epsilon,
        objective,
        best_bound,
        gap_percent: gap,
        status,
        wall_secs: started.elapsed().as_secs_f64(),
        metrics: Some(metrics),
    })
}

fn run_grid(
    jobs: Vec<Job>,
    command: &str,
    epsilon: f64,
    time_limit: f64,
    route: &SolverRoute,
    out: &PathBuf,
) -> anyhow::Result<()> {
    let outcomes: Vec<(usize, anyhow::Result<ResultsRow>)> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, job)| (i, run_job(job, command, epsilon, time_limit, route)))
        .collect();
    let mut rows = Vec::with_capacity(jobs.len());
    let mut failures = 0usize;
    let mut ordered: Vec<(usize, anyhow::Result<ResultsRow>)> = outcomes;
    ordered.sort_by_key(|(i, _)| *i);
    for (i, outcome) in ordered {
        match outcome {
            Ok(row) => rows.push(row),
            Err(err) => {
                failures += 1;
                eprintln!(
                    "job {i} ({} d1={} seed={}) failed: {err:#}",
                    jobs[i].method, jobs[i].hidden, jobs[i].seed
                );
            }
        }
    }
    append_rows(out, &rows)?;
    println!("wrote {} rows to {} ({failures} failures)", rows.len(), out.display());

    // Per-cell accuracy summary.
    let mut cells: std::collections::BTreeMap<(String, usize), Vec<f64>> = Default::default();
    for row in &rows {
        if let Some(m) = &row.metrics {
            cells.entry((row.method.clone(), row.d1)).or_default().push(m.accuracy);
        }
    }
    for ((method, d1), accs) in cells {
        let avg = accs.iter().sum::<f64>() / accs.len() as f64;
        let max = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = accs.iter().cloned().fold(f64::INFINITY, f64::min);
        println!("{method} d1={d1}: accuracy avg {avg:.4} max {max:.4} min {min:.4}");
    }
    if failures > 0 && rows.is_empty() {
        anyhow::bail!("all {failures} jobs failed");
    }
    Ok(())
}

pub fn random(args: RandomArgs) -> anyhow::Result<()> {
    let sizes = parse_list(&args.sizes, "size")?;
    let widths = parse_list(&args.hidden, "hidden width")?;
    let methods: Vec<String> = args.methods.split(',').map(|s| s.trim().to_string()).collect();
    for m in &methods {
        if !matches!(m.as_str(), "exact" | "heuristic" | "baseline") {
            anyhow::bail!("unknown method `{m}` for the random experiment");
        }
    }
    let mut jobs = Vec::new();
    for (size_idx, &size) in sizes.iter().enumerate() {
        for trial in 0..args.trials {
            // One dataset per (size, trial), shared by every width and method.
            let data_seed = args.seed + 1000 * trial as u64 + size_idx as u64;
            let dataset = data::generate_random(args.n, size, data_seed)?;
            let (train, test) = data::train_test_split(&dataset, args.test_fraction, data_seed, true)?;
            for &hidden in &widths {
                for method in &methods {
                    jobs.push(Job {
                        method: method.clone(),
                        hidden,
                        seed: data_seed,
                        train: train.clone(),
                        test: test.clone(),
                    });
                }
            }
        }
    }
    run_grid(jobs, "experiment-random", args.epsilon, args.time_limit, &SolverRoute::Builtin, &args.out)
}

pub fn bcw(args: BcwArgs) -> anyhow::Result<()> {
    let (dataset, report) = data::load_bcw(&args.data)?;
    println!(
        "loaded {} rows, dropped {} with missing values, kept {} (9 attributes)",
        report.total_rows, report.dropped_missing, report.kept_rows
    );
    let widths = parse_list(&args.hidden, "hidden width")?;
    let methods: Vec<String> = args.methods.split(',').map(|s| s.trim().to_string()).collect();
    for m in &methods {
        if !matches!(
            m.as_str(),
            "exact" | "exact-zero" | "heuristic" | "heuristic-zero" | "baseline"
        ) {
            anyhow::bail!("unknown method `{m}` for the bcw experiment");
        }
    }
    let route = solver_route(args.solver, args.solver_cmd.as_deref())?;
    let mut jobs = Vec::new();
    for shuffle in 0..args.shuffles {
        let split_seed = args.seed + shuffle as u64;
        let (train, test) = data::train_test_split(&dataset, args.test_fraction, split_seed, true)?;
        for &hidden in &widths {
            for method in &methods {
                jobs.push(Job {
                    method: method.clone(),
                    hidden,
                    seed: split_seed,
                    train: train.clone(),
                    test: test.clone(),
                });
            }
        }
    }
    run_grid(jobs, "experiment-bcw", args.epsilon, args.time_limit, &route, &args.out)
}

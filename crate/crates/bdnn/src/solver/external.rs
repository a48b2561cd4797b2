//! Driving an external MILP solver through MPS files.
//!
//! The solver is described by a command template containing `{model}` and
//! `{solution}` placeholders, e.g.
//! `mysolver {model} --out {solution} --time-limit 600`. The environment
//! variable `BDNN_SOLVER_CMD` supplies the template when none is configured
//! explicitly. The solution listing the command must produce is plain text:
//! one `name value` pair per line, plus `objective <v>` and optionally
//! `status <s>` and `gap <percent>` lines.

use std::collections::HashMap;
use std::io::ErrorKind;
use std::process::Command;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::milp::{MilpProblem, VarKind};
use crate::solver::mps::write_mps;
use crate::solver::{MilpSolve, Solution, SolveStats, SolveStatus, SolverConfig};

/// Name of the environment variable holding a default command template.
pub const SOLVER_CMD_ENV: &str = "BDNN_SOLVER_CMD";

/// External solver invoked per solve through temp files.
#[derive(Debug, Clone)]
pub struct ExternalSolver {
    template: String,
}

impl ExternalSolver {
    pub fn new(template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        if !template.contains("{model}") || !template.contains("{solution}") {
            return Err(Error::InvalidProblem(
                "external solver template needs {model} and {solution} placeholders".into(),
            ));
        }
        Ok(Self { template })
    }

    /// Template from `BDNN_SOLVER_CMD`.
    pub fn from_env() -> Result<Self> {
        match std::env::var(SOLVER_CMD_ENV) {
            Ok(t) if !t.trim().is_empty() => Self::new(t),
            _ => Err(Error::MissingExecutable(format!(
                "no external solver configured; set {SOLVER_CMD_ENV} or pass a command template"
            ))),
        }
    }

    pub fn template(&self) -> &str {
        &self.template
    }
}

impl MilpSolve for ExternalSolver {
    fn solve_milp(&self, problem: &MilpProblem, config: &SolverConfig) -> Result<Solution> {
        solve_external(problem, &self.template, config)
    }
}

/// Writes the model, runs the configured command and parses its solution
/// listing back into a validated [`Solution`].
pub fn solve_external(
    problem: &MilpProblem,
    command_template: &str,
    config: &SolverConfig,
) -> Result<Solution> {
    problem.validate().map_err(Error::InvalidProblem)?;
    let dir = tempfile::tempdir()?;
    let model_path = dir.path().join("model.mps");
    let solution_path = dir.path().join("solution.txt");
    std::fs::write(&model_path, write_mps(problem))?;

    let rendered: Vec<String> = command_template
        .split_whitespace()
        .map(|tok| {
            tok.replace("{model}", &model_path.to_string_lossy())
                .replace("{solution}", &solution_path.to_string_lossy())
        })
        .collect();
    if rendered.is_empty() {
        return Err(Error::MissingExecutable("empty solver command".into()));
    }

    let started = Instant::now();
    let output = Command::new(&rendered[0]).args(&rendered[1..]).output().map_err(|e| {
        if e.kind() == ErrorKind::NotFound {
            Error::MissingExecutable(rendered[0].clone())
        } else {
            Error::Io(e)
        }
    })?;
    let wall = started.elapsed();
    if !output.status.success() {
        return Err(Error::ExternalFailure {
            code: output
                .status
                .code()
                .map_or_else(|| "signal".to_string(), |c| c.to_string()),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }

    let listing = std::fs::read_to_string(&solution_path).map_err(|_| {
        Error::UnparsableOutput(format!(
            "solver wrote no solution file at {}",
            solution_path.display()
        ))
    })?;
    let mut solution = parse_solution_listing(problem, &listing, config)?;
    solution.stats.wall = wall;
    Ok(solution)
}

/// Parses a `name value` listing plus `objective`/`status`/`gap` lines.
///
/// Variables missing from the listing default to 0 (solvers routinely omit
/// zeros); unknown names and bound violations beyond the integrality
/// tolerance are errors naming the offender.
pub fn parse_solution_listing(
    problem: &MilpProblem,
    listing: &str,
    config: &SolverConfig,
) -> Result<Solution> {
    let names = crate::solver::mps::variable_names(problem);
    let index: HashMap<&str, usize> =
        names.iter().enumerate().map(|(j, n)| (n.as_str(), j)).collect();

    let mut values = vec![0.0f64; problem.num_variables()];
    let mut objective: Option<f64> = None;
    let mut status: Option<SolveStatus> = None;
    let mut gap: Option<f64> = None;

    for line in listing.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let key = it.next().unwrap();
        let Some(raw) = it.next() else {
            return Err(Error::UnparsableOutput(format!("`{line}` has no value")));
        };
        match key.to_ascii_lowercase().as_str() {
            "objective" | "obj" => {
                objective = Some(raw.parse().map_err(|_| {
                    Error::UnparsableOutput(format!("objective `{raw}` is not a number"))
                })?);
            }
            "status" => {
                status = Some(SolveStatus::parse(raw).ok_or_else(|| {
                    Error::UnparsableOutput(format!("unknown status `{raw}`"))
                })?);
            }
            "gap" => {
                gap = Some(raw.parse().map_err(|_| {
                    Error::UnparsableOutput(format!("gap `{raw}` is not a number"))
                })?);
            }
            _ => {
                let Some(&j) = index.get(key) else {
                    return Err(Error::UnparsableOutput(format!(
                        "solution names unknown variable `{key}`"
                    )));
                };
                values[j] = raw.parse().map_err(|_| {
                    Error::UnparsableOutput(format!("value for `{key}` is not a number"))
                })?;
            }
        }
    }

    let status = status.unwrap_or(SolveStatus::Feasible);
    if status == SolveStatus::Infeasible {
        return Ok(Solution::infeasible(SolveStats::default()));
    }
    let Some(objective) = objective else {
        return Err(Error::UnparsableOutput("listing has no objective line".into()));
    };

    // Validate bounds and snap integer values.
    let tol = config.integrality_tol.max(config.feasibility_tol);
    for (j, var) in problem.variables().iter().enumerate() {
        let v = values[j];
        if v < var.lower - tol || v > var.upper + tol {
            return Err(Error::BoundViolation {
                name: names[j].clone(),
                value: v,
                lower: var.lower,
                upper: var.upper,
            });
        }
        values[j] = v.clamp(var.lower, var.upper);
        if var.kind == VarKind::Binary {
            if (v - v.round()).abs() > config.integrality_tol {
                return Err(Error::BoundViolation {
                    name: names[j].clone(),
                    value: v,
                    lower: 0.0,
                    upper: 1.0,
                });
            }
            values[j] = v.round();
        }
    }

    let best_bound = objective - objective.abs().max(1.0) * gap.unwrap_or(0.0) / 100.0;
    Ok(Solution {
        status,
        objective: Some(objective),
        best_bound,
        gap_percent: gap.or(Some(0.0)),
        values: Some(values),
        stats: SolveStats::default(),
        events: Vec::new(),
    })
}

/// Renders a solution in the listing format this adapter consumes.
pub fn format_solution_listing(problem: &MilpProblem, solution: &Solution) -> String {
    let mut out = String::new();
    out.push_str(&format!("status {}\n", solution.status));
    if let Some(obj) = solution.objective {
        out.push_str(&format!("objective {obj}\n"));
    }
    if let Some(gap) = solution.gap_percent {
        out.push_str(&format!("gap {gap}\n"));
    }
    if let Some(values) = &solution.values {
        let names = crate::solver::mps::variable_names(problem);
        for (j, v) in values.iter().enumerate() {
            out.push_str(&format!("{} {}\n", names[j], v));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{LinExpr, MilpProblem, Sense, VarKind};

    fn tiny() -> MilpProblem {
        let mut p = MilpProblem::new("tiny");
        let x = p.add_named_variable("x", VarKind::Continuous, 0.0, 1.0);
        let b = p.add_named_variable("b", VarKind::Binary, 0.0, 1.0);
        p.add_constraint("c", LinExpr::new().term(x, 1.0).term(b, 1.0), Sense::Le, 1.5);
        p.set_objective(LinExpr::new().term(x, -1.0).term(b, -1.0));
        p
    }

    #[test]
    fn missing_executable_is_distinct() {
        let err = solve_external(
            &tiny(),
            "definitely-not-a-solver-binary {model} {solution}",
            &SolverConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingExecutable(_)), "{err}");
    }

    #[test]
    fn listing_round_trip() {
        let p = tiny();
        let cfg = SolverConfig::default();
        let listing = "status optimal\nobjective -1.5\ngap 0\nx 0.5\nb 1\n";
        let sol = parse_solution_listing(&p, listing, &cfg).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_eq!(sol.objective, Some(-1.5));
        assert_eq!(sol.values.as_ref().unwrap()[1], 1.0);
        let text = format_solution_listing(&p, &sol);
        let again = parse_solution_listing(&p, &text, &cfg).unwrap();
        assert_eq!(again.values, sol.values);
    }

    #[test]
    fn bound_violation_names_the_variable() {
        let p = tiny();
        let listing = "objective 0\nx 7.0\n";
        let err = parse_solution_listing(&p, listing, &SolverConfig::default()).unwrap_err();
        match err {
            Error::BoundViolation { name, .. } => assert_eq!(name, "x"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn unknown_variable_is_an_error() {
        let p = tiny();
        let err =
            parse_solution_listing(&p, "objective 0\nnope 1\n", &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::UnparsableOutput(_)));
    }

    #[test]
    fn missing_variables_default_to_zero() {
        let p = tiny();
        let sol = parse_solution_listing(&p, "objective 0\n", &SolverConfig::default()).unwrap();
        assert_eq!(sol.values.unwrap(), vec![0.0, 0.0]);
    }
}

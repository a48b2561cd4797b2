//! MILP solving: a built-in branch-and-bound over a bounded-variable simplex,
//! plus MPS export and an adapter for driving external solvers.

mod branch_bound;
pub mod external;
pub mod mps;
mod simplex;

use std::time::Duration;

use crate::error::{Error, Result};
use crate::milp::problem::{MilpProblem, Sense, VarId, VarKind};
use simplex::{LpStatus, SimplexRow};

pub use external::ExternalSolver;

/// Knobs of a MILP solve.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Wall-clock budget for one solve.
    pub time_limit: Duration,
    /// Absolute bound gap below which a node cannot improve the incumbent.
    /// The default of `1 - 1e-6` exploits that the training objective is an
    /// integer misclassification count.
    pub gap_tolerance: f64,
    pub feasibility_tol: f64,
    pub integrality_tol: f64,
    pub node_limit: Option<u64>,
    /// Carried for reproducibility bookkeeping and external solvers; the
    /// built-in search is deterministic regardless.
    pub seed: u64,
    /// Record bound/incumbent events for inspection.
    pub record_events: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            time_limit: Duration::from_secs(86_400),
            gap_tolerance: 1.0 - 1e-6,
            feasibility_tol: 1e-7,
            integrality_tol: 1e-6,
            node_limit: None,
            seed: 0,
            record_events: false,
        }
    }
}

impl SolverConfig {
    pub fn with_time_limit(mut self, limit: Duration) -> Self {
        self.time_limit = limit;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    TimeLimit,
    NodeLimit,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Feasible => "feasible",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::TimeLimit => "time_limit",
            SolveStatus::NodeLimit => "node_limit",
        })
    }
}

impl SolveStatus {
    pub fn parse(text: &str) -> Option<Self> {
        match text.to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "optimal" | "opt" | "optimal_solution_found" => Some(SolveStatus::Optimal),
            "feasible" | "suboptimal" | "stopped" | "interrupted" => Some(SolveStatus::Feasible),
            "infeasible" | "integer_infeasible" | "proven_infeasible" => Some(SolveStatus::Infeasible),
            "time_limit" | "timelimit" | "timeout" => Some(SolveStatus::TimeLimit),
            "node_limit" | "nodelimit" => Some(SolveStatus::NodeLimit),
            _ => None,
        }
    }

    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Feasible)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub nodes: u64,
    pub simplex_iterations: u64,
    pub wall: Duration,
}

/// One bound/incumbent change during branch-and-bound.
#[derive(Debug, Clone, Copy)]
pub struct BoundEvent {
    pub nodes: u64,
    pub best_bound: f64,
    pub incumbent: Option<f64>,
}

/// Solver output.
#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub objective: Option<f64>,
    pub best_bound: f64,
    /// Percentage gap between incumbent and proven bound; `None` without an
    /// incumbent.
    pub gap_percent: Option<f64>,
    pub values: Option<Vec<f64>>,
    pub stats: SolveStats,
    pub events: Vec<BoundEvent>,
}

impl Solution {
    pub fn value(&self, id: VarId) -> Option<f64> {
        self.values.as_ref().and_then(|v| v.get(id.0).copied())
    }

    pub(crate) fn infeasible(stats: SolveStats) -> Self {
        Self {
            status: SolveStatus::Infeasible,
            objective: None,
            best_bound: f64::INFINITY,
            gap_percent: None,
            values: None,
            stats,
            events: Vec::new(),
        }
    }
}

/// Hook that turns a raw branch-and-bound candidate into an incumbent whose
/// semantics the caller actually wants (the trainer uses this to force
/// forward-replay-consistent assignments). Returning `None` rejects the
/// candidate; search continues.
pub trait IncumbentPolisher: Sync {
    fn polish(&self, candidate: &[f64]) -> Option<Vec<f64>>;
}

/// Interface shared by the built-in solver and external adapters, so the
/// heuristic and robust loops can run over either.
pub trait MilpSolve: Sync {
    fn solve_milp(&self, problem: &MilpProblem, config: &SolverConfig) -> Result<Solution>;
}

/// The built-in branch-and-bound solver.
#[derive(Debug, Clone, Default)]
pub struct BuiltinSolver;

impl MilpSolve for BuiltinSolver {
    fn solve_milp(&self, problem: &MilpProblem, config: &SolverConfig) -> Result<Solution> {
        solve(problem, config)
    }
}

/// Solves a MILP to proven optimality within the configured limits.
pub fn solve(problem: &MilpProblem, config: &SolverConfig) -> Result<Solution> {
    branch_bound::solve_bb(problem, config, None)
}

/// Same as [`solve`], with an incumbent polisher installed.
pub fn solve_with_polisher(
    problem: &MilpProblem,
    config: &SolverConfig,
    polisher: &dyn IncumbentPolisher,
) -> Result<Solution> {
    branch_bound::solve_bb(problem, config, Some(polisher))
}

/// LP relaxation result.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub feasible: bool,
    pub objective: f64,
    pub values: Vec<f64>,
    pub iterations: usize,
}

/// Solves the LP relaxation of a problem (integrality dropped).
pub fn solve_lp(problem: &MilpProblem) -> Result<LpSolution> {
    solve_lp_with_tol(problem, 1e-7)
}

pub(crate) fn solve_lp_with_tol(problem: &MilpProblem, feas_tol: f64) -> Result<LpSolution> {
    problem.validate().map_err(Error::InvalidProblem)?;
    let (bounds, cost, rows) = relaxation_parts(problem);
    let out = simplex::solve_bounded(&bounds, &cost, &rows, feas_tol)?;
    if out.status == LpStatus::Infeasible {
        return Ok(LpSolution {
            feasible: false,
            objective: f64::INFINITY,
            values: vec![],
            iterations: out.iterations,
        });
    }
    let mut values = out.values;
    snap_to_bounds(problem, &mut values);
    if let Err(v) = problem.check_assignment_lp(&values, feas_tol) {
        return Err(Error::Numerical(format!("LP solution failed the post-check: {v}")));
    }
    let objective = problem.objective().eval(&values);
    Ok(LpSolution { feasible: true, objective, values, iterations: out.iterations })
}

pub(crate) fn relaxation_parts(
    problem: &MilpProblem,
) -> (Vec<(f64, f64)>, Vec<f64>, Vec<SimplexRow>) {
    let n = problem.num_variables();
    let bounds: Vec<(f64, f64)> =
        problem.variables().iter().map(|v| (v.lower, v.upper)).collect();
    let mut cost = vec![0.0f64; n];
    for &(VarId(j), c) in &problem.objective().terms {
        cost[j] += c;
    }
    let rows: Vec<SimplexRow> = problem
        .constraints()
        .iter()
        .map(|c| SimplexRow {
            terms: c.expr.terms.iter().map(|&(VarId(j), v)| (j, v)).collect(),
            sense: c.sense,
            rhs: c.rhs - c.expr.constant,
        })
        .collect();
    (bounds, cost, rows)
}

pub(crate) fn snap_to_bounds(problem: &MilpProblem, values: &mut [f64]) {
    for (v, var) in values.iter_mut().zip(problem.variables()) {
        if (*v - var.lower).abs() <= 1e-9 {
            *v = var.lower;
        } else if (*v - var.upper).abs() <= 1e-9 {
            *v = var.upper;
        }
        if var.kind == VarKind::Binary {
            let r = v.round();
            if (*v - r).abs() <= 1e-12 {
                *v = r;
            }
        }
    }
}

impl MilpProblem {
    /// Constraint/bound check that ignores integrality, for LP solutions.
    pub(crate) fn check_assignment_lp(
        &self,
        values: &[f64],
        tol: f64,
    ) -> std::result::Result<(), crate::milp::problem::Violation> {
        use crate::milp::problem::Violation;
        for (i, v) in self.variables().iter().enumerate() {
            let x = values[i];
            if x < v.lower - tol || x > v.upper + tol {
                return Err(Violation::Bound {
                    var: if v.name.is_empty() { format!("x{i}") } else { v.name.clone() },
                    value: x,
                    lower: v.lower,
                    upper: v.upper,
                });
            }
        }
        for c in self.constraints() {
            let activity = c.expr.eval(values);
            let ok = match c.sense {
                Sense::Le => activity <= c.rhs + tol,
                Sense::Ge => activity >= c.rhs - tol,
                Sense::Eq => (activity - c.rhs).abs() <= tol,
            };
            if !ok {
                return Err(Violation::Constraint {
                    name: c.name.clone(),
                    activity,
                    sense: c.sense,
                    rhs: c.rhs,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::problem::{LinExpr, MilpProblem, Sense, VarKind};

    #[test]
    fn lp_example_lower_bound() {
        let mut p = MilpProblem::new("t");
        let x = p.add_named_variable("x", VarKind::Continuous, 0.0, 1.0);
        p.add_constraint("floor", LinExpr::new().term(x, 1.0), Sense::Ge, 0.3);
        p.set_objective(LinExpr::new().term(x, 1.0));
        let sol = solve_lp(&p).unwrap();
        assert!(sol.feasible);
        assert!((sol.objective - 0.3).abs() < 1e-9);
    }

    #[test]
    fn lp_example_infeasible() {
        let mut p = MilpProblem::new("t");
        let x = p.add_named_variable("x", VarKind::Continuous, 0.0, 1.0);
        p.add_constraint("a", LinExpr::new().term(x, 1.0), Sense::Le, 0.2);
        p.add_constraint("b", LinExpr::new().term(x, 1.0), Sense::Ge, 0.8);
        let sol = solve_lp(&p).unwrap();
        assert!(!sol.feasible);
    }
}

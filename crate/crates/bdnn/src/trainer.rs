//! Glue between the MILP builders and the solvers.
//!
//! The central piece is [`ReplayPolisher`]: branch-and-bound candidates are
//! rebuilt so that the activation variables equal what the extracted model's
//! forward pass computes, term for term. Weights are re-fit by a small LP
//! that maximizes the worst slack of the threshold rows, so no pre-activation
//! sits close enough to a threshold for float noise to flip it. As a result
//! a reported objective is exactly the misclassification count of the
//! returned model.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::milp::{
    build_nominal, extract_model_from_values, BdnnMilp, BuildOptions, LinExpr, MilpProblem,
    Sense, VarId, VarKey, VarKind, VariableCatalog,
};
use crate::model::{threshold_forward, Architecture, BdnnModel, LambdaMode, WeightDomain};
use crate::solver::{
    solve_lp_with_tol, solve_with_polisher, ExternalSolver, IncumbentPolisher, MilpSolve,
    Solution, SolveStatus, SolverConfig,
};

/// Which solver backs a training run.
#[derive(Debug, Clone)]
pub enum SolverRoute {
    Builtin,
    External(ExternalSolver),
}

impl SolverRoute {
    pub fn as_milp_solve(&self) -> &dyn MilpSolve {
        match self {
            SolverRoute::Builtin => &crate::solver::BuiltinSolver,
            SolverRoute::External(e) => e,
        }
    }
}

impl Default for SolverRoute {
    fn default() -> Self {
        SolverRoute::Builtin
    }
}

/// Exact training result.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: BdnnModel,
    pub solution: Solution,
}

/// Polishes candidate assignments into forward-replayable incumbents.
pub struct ReplayPolisher<'a> {
    problem: &'a MilpProblem,
    catalog: &'a VariableCatalog,
    arch: &'a Architecture,
    opts: &'a BuildOptions,
    labels: &'a [u8],
    /// Effective inputs per scenario and point (`x` or `x + delta`).
    scenario_points: Vec<Vec<Vec<f64>>>,
    /// Layer-1 big-M per point, matching what the problem's rows use. The
    /// guards these constants build are real constraints on the weights and
    /// must be part of the margin fit.
    first_layer_big_m: Vec<f64>,
}

impl<'a> ReplayPolisher<'a> {
    pub fn new(
        problem: &'a MilpProblem,
        catalog: &'a VariableCatalog,
        arch: &'a Architecture,
        opts: &'a BuildOptions,
        labels: &'a [u8],
        scenario_points: Vec<Vec<Vec<f64>>>,
        first_layer_big_m: Vec<f64>,
    ) -> Self {
        Self { problem, catalog, arch, opts, labels, scenario_points, first_layer_big_m }
    }

    pub fn nominal(built: &'a BdnnMilp, data: &'a Dataset) -> Self {
        let m1 = crate::milp::big_m(built.arch(), built.radius())[0];
        Self::new(
            &built.problem,
            &built.catalog,
            built.arch(),
            built.opts(),
            data.labels(),
            vec![data.points().to_vec()],
            vec![m1; data.len()],
        )
    }

    fn read_first_stage(&self, values: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let arch = self.arch;
        let mut weights = Vec::with_capacity(arch.depth());
        for k in 1..=arch.depth() {
            let mut layer = Vec::with_capacity(arch.layer_weight_count(k));
            for j in 0..arch.width(k) {
                for l in 0..arch.width(k - 1) {
                    let id = self.catalog.require(VarKey::Weight { layer: k, row: j, col: l })?;
                    let raw = values[id.0];
                    layer.push(match arch.weight_domain {
                        WeightDomain::Binary => raw.round().clamp(0.0, 1.0),
                        WeightDomain::ContinuousBox => raw.clamp(-1.0, 1.0),
                    });
                }
            }
            weights.push(layer);
        }
        let mut lambdas = Vec::with_capacity(arch.depth());
        for k in 1..=arch.depth() {
            lambdas.push(match arch.lambda_mode {
                LambdaMode::FixedZero => 0.0,
                LambdaMode::Trainable => {
                    let id = self.catalog.require(VarKey::Lambda { layer: k })?;
                    values[id.0].clamp(-1.0, 1.0)
                }
            });
        }
        Ok((weights, lambdas))
    }

    fn sparsity_flags(&self, values: &[f64]) -> Option<Vec<Vec<f64>>> {
        self.opts.sparsity_limit?;
        let arch = self.arch;
        let mut flags = Vec::with_capacity(arch.depth());
        for k in 1..=arch.depth() {
            let mut layer = Vec::with_capacity(arch.layer_weight_count(k));
            for j in 0..arch.width(k) {
                for l in 0..arch.width(k - 1) {
                    let id = self.catalog.get(VarKey::SparsityFlag { layer: k, row: j, col: l })?;
                    layer.push(values[id.0].round().clamp(0.0, 1.0));
                }
            }
            flags.push(layer);
        }
        Some(flags)
    }

    /// Max-margin LP: given fixed activation patterns, find weights and
    /// thresholds realizing them with the largest worst-case slack.
    fn margin_fit(
        &self,
        patterns: &[Vec<Vec<Vec<u8>>>],
        w0: &[Vec<f64>],
        flags: Option<&[Vec<f64>]>,
    ) -> Result<Option<(Vec<Vec<f64>>, Vec<f64>, f64)>> {
        let arch = self.arch;
        let depth = arch.depth();
        let eps = self.opts.epsilon;
        let mut lp = MilpProblem::new("margin_fit");

        let weights_free = arch.weight_domain == WeightDomain::ContinuousBox;
        let mut w_ids: Vec<Vec<Option<VarId>>> = Vec::with_capacity(depth);
        for k in 1..=depth {
            let mut layer = Vec::with_capacity(arch.layer_weight_count(k));
            for idx in 0..arch.layer_weight_count(k) {
                if weights_free {
                    let (mut lo, mut hi) = (-1.0, 1.0);
                    if let Some(f) = flags {
                        if f[k - 1][idx] == 0.0 {
                            lo = 0.0;
                            hi = 0.0;
                        }
                    }
                    layer.push(Some(lp.add_named_variable(
                        format!("w{k}_{idx}"),
                        VarKind::Continuous,
                        lo,
                        hi,
                    )));
                } else {
                    layer.push(None);
                }
            }
            w_ids.push(layer);
        }
        let lam_ids: Vec<Option<VarId>> = (1..=depth)
            .map(|k| match arch.lambda_mode {
                LambdaMode::Trainable => {
                    Some(lp.add_named_variable(format!("lam{k}"), VarKind::Continuous, -1.0, 1.0))
                }
                LambdaMode::FixedZero => None,
            })
            .collect();
        let t = lp.add_named_variable("t", VarKind::Continuous, 0.0, 4.0);

        let deep_ms = crate::milp::big_m(arch, 0.0);
        for (s, pts) in self.scenario_points.iter().enumerate() {
            for (i, x) in pts.iter().enumerate() {
                let pattern = &patterns[s][i];
                for k in 1..=depth {
                    let d_in = arch.width(k - 1);
                    let big_m = if k == 1 { self.first_layer_big_m[i] } else { deep_ms[k - 1] };
                    for j in 0..arch.width(k) {
                        let mut expr = LinExpr::new();
                        let mut constant = 0.0;
                        for l in 0..d_in {
                            let factor = if k == 1 {
                                x[l]
                            } else {
                                f64::from(pattern[k - 2][l])
                            };
                            if factor == 0.0 {
                                continue;
                            }
                            match w_ids[k - 1][j * d_in + l] {
                                Some(w) => expr.add_term(w, factor),
                                None => constant += w0[k - 1][j * d_in + l] * factor,
                            }
                        }
                        if let Some(lam) = lam_ids[k - 1] {
                            expr.add_term(lam, -1.0);
                        }
                        // Threshold side with margin t, plus the big-M guard
                        // of the inactive branch, which binds for tight Ms.
                        let fired = pattern[k - 1][j] == 1;
                        if fired {
                            // lambda + t <= alpha <= M + lambda - eps
                            let mut on = expr.clone();
                            on.add_term(t, -1.0);
                            lp.add_constraint(
                                format!("m_{s}_{i}_{k}_{j}_on"),
                                on,
                                Sense::Ge,
                                -constant,
                            );
                            lp.add_constraint(
                                format!("m_{s}_{i}_{k}_{j}_cap"),
                                expr,
                                Sense::Le,
                                big_m - eps - constant,
                            );
                        } else {
                            // lambda - M <= alpha <= lambda - eps - t
                            let mut off = expr.clone();
                            off.add_term(t, 1.0);
                            lp.add_constraint(
                                format!("m_{s}_{i}_{k}_{j}_off"),
                                off,
                                Sense::Le,
                                -eps - constant,
                            );
                            lp.add_constraint(
                                format!("m_{s}_{i}_{k}_{j}_floor"),
                                expr,
                                Sense::Ge,
                                -big_m - constant,
                            );
                        }
                    }
                }
            }
        }
        lp.set_objective(LinExpr::new().term(t, -1.0));

        let sol = solve_lp_with_tol(&lp, 1e-9)?;
        if !sol.feasible {
            return Ok(None);
        }
        let t_star = sol.values[t.0];
        let margin_floor = (eps / 4.0).min(1e-6);
        if t_star < margin_floor {
            return Ok(None);
        }
        let mut weights = w0.to_vec();
        if weights_free {
            for k in 1..=depth {
                for idx in 0..arch.layer_weight_count(k) {
                    if let Some(id) = w_ids[k - 1][idx] {
                        weights[k - 1][idx] = sol.values[id.0].clamp(-1.0, 1.0);
                    }
                }
            }
        }
        let lambdas: Vec<f64> = (1..=depth)
            .map(|k| match lam_ids[k - 1] {
                Some(id) => sol.values[id.0].clamp(-1.0, 1.0),
                None => 0.0,
            })
            .collect();
        Ok(Some((weights, lambdas, t_star)))
    }

    fn assemble(
        &self,
        weights: &[Vec<f64>],
        lambdas: &[f64],
        patterns: &[Vec<Vec<Vec<u8>>>],
        flags: Option<&[Vec<f64>]>,
    ) -> Result<Vec<f64>> {
        let arch = self.arch;
        let mut values = vec![0.0f64; self.problem.num_variables()];
        for (key, id) in self.catalog.iter() {
            let v = match key {
                VarKey::Weight { layer, row, col } => {
                    weights[layer - 1][row * arch.width(layer - 1) + col]
                }
                VarKey::Lambda { layer } => lambdas[layer - 1],
                VarKey::Unit { scenario, point, layer, row } => {
                    f64::from(patterns[scenario][point][layer - 1][row])
                }
                VarKey::Product { scenario, point, layer, col, row } => {
                    let u_prev = f64::from(patterns[scenario][point][layer - 2][col]);
                    weights[layer - 1][row * arch.width(layer - 1) + col] * u_prev
                }
                VarKey::SparsityFlag { layer, row, col } => match flags {
                    Some(f) => f[layer - 1][row * arch.width(layer - 1) + col],
                    None => 0.0,
                },
                VarKey::Epigraph => {
                    // Worst scenario loss for the fixed patterns.
                    let mut worst = 0.0f64;
                    for pats in patterns {
                        let mut loss = 0.0;
                        for (i, &y) in self.labels.iter().enumerate() {
                            let out = pats[i].last().unwrap()[0];
                            if out != y {
                                loss += 1.0;
                            }
                        }
                        worst = worst.max(loss);
                    }
                    worst
                }
                VarKey::Delta { .. } | VarKey::DeltaPlus { .. } | VarKey::DeltaMinus { .. } => {
                    return Err(Error::InvalidProblem(
                        "training problems do not carry perturbation variables".into(),
                    ));
                }
            };
            values[id.0] = v;
        }
        Ok(values)
    }
}

impl ReplayPolisher<'_> {
    /// Candidate activation patterns read straight from the `u` variables;
    /// `None` when any of them is fractional.
    fn patterns_from_candidate(&self, values: &[f64]) -> Option<Vec<Vec<Vec<Vec<u8>>>>> {
        let arch = self.arch;
        let mut all = Vec::with_capacity(self.scenario_points.len());
        for (s, pts) in self.scenario_points.iter().enumerate() {
            let mut per_point = Vec::with_capacity(pts.len());
            for i in 0..pts.len() {
                let mut layers = Vec::with_capacity(arch.depth());
                for k in 1..=arch.depth() {
                    let mut row = Vec::with_capacity(arch.width(k));
                    for j in 0..arch.width(k) {
                        let id = self
                            .catalog
                            .get(VarKey::Unit { scenario: s, point: i, layer: k, row: j })?;
                        let v = values[id.0];
                        if (v - v.round()).abs() > 1e-6 {
                            return None;
                        }
                        row.push(v.round() as u8);
                    }
                    layers.push(row);
                }
                per_point.push(layers);
            }
            all.push(per_point);
        }
        Some(all)
    }

    fn try_pattern(
        &self,
        patterns: &[Vec<Vec<Vec<u8>>>],
        w0: &[Vec<f64>],
        flags: Option<&[Vec<f64>]>,
    ) -> Option<Vec<f64>> {
        let (weights, lambdas, _t) = self.margin_fit(patterns, w0, flags).ok()??;
        // The refit weights must reproduce the patterns with the crate's own
        // forward arithmetic; this is the authoritative replay check.
        for (s, pts) in self.scenario_points.iter().enumerate() {
            for (i, x) in pts.iter().enumerate() {
                if threshold_forward(self.arch, &weights, &lambdas, x) != patterns[s][i] {
                    return None;
                }
            }
        }
        self.assemble(&weights, &lambdas, patterns, flags).ok()
    }
}

impl IncumbentPolisher for ReplayPolisher<'_> {
    fn polish(&self, candidate: &[f64]) -> Option<Vec<f64>> {
        let (w0, l0) = self.read_first_stage(candidate).ok()?;
        let flags = self.sparsity_flags(candidate);
        // The solver's own activation assignment is the pattern to keep when
        // it is integral (its objective is the node's); the pattern replayed
        // from the candidate weights is the fallback for fractional points.
        if let Some(patterns) = self.patterns_from_candidate(candidate) {
            if let Some(values) = self.try_pattern(&patterns, &w0, flags.as_deref()) {
                return Some(values);
            }
        }
        let forward_patterns: Vec<Vec<Vec<Vec<u8>>>> = self
            .scenario_points
            .iter()
            .map(|pts| {
                pts.iter().map(|x| threshold_forward(self.arch, &w0, &l0, x)).collect()
            })
            .collect();
        self.try_pattern(&forward_patterns, &w0, flags.as_deref())
    }
}

/// Global training through the exact MILP.
pub fn train_exact(
    data: &Dataset,
    arch: &Architecture,
    opts: &BuildOptions,
    config: &SolverConfig,
    route: &SolverRoute,
) -> Result<TrainOutcome> {
    let built = build_nominal(data, arch, opts)?;
    let solution = solve_built(&built, data, config, route)?;
    finish_outcome(&built, data, solution)
}

/// Solves an already-built training MILP with replay polishing.
pub fn solve_built(
    built: &BdnnMilp,
    data: &Dataset,
    config: &SolverConfig,
    route: &SolverRoute,
) -> Result<Solution> {
    let polisher = ReplayPolisher::nominal(built, data);
    match route {
        SolverRoute::Builtin => solve_with_polisher(&built.problem, config, &polisher),
        SolverRoute::External(ext) => {
            let mut solution = ext.solve_milp(&built.problem, config)?;
            repolish_external(&polisher, &built.problem, &mut solution);
            Ok(solution)
        }
    }
}

/// Applies the replay polish to an externally produced solution in place.
/// The activation pattern, and with it the objective, is preserved; only the
/// weight values move (away from the thresholds).
pub(crate) fn repolish_external(
    polisher: &ReplayPolisher<'_>,
    problem: &MilpProblem,
    solution: &mut Solution,
) {
    if !solution.status.has_solution() {
        return;
    }
    let Some(values) = solution.values.as_ref() else { return };
    if let Some(polished) = polisher.polish(values) {
        let obj = problem.objective().eval(&polished);
        solution.objective = Some(obj);
        solution.values = Some(polished);
    }
}

pub(crate) fn finish_outcome(
    built: &BdnnMilp,
    data: &Dataset,
    solution: Solution,
) -> Result<TrainOutcome> {
    match solution.status {
        SolveStatus::Infeasible => Err(Error::NotFeasible("infeasible".into())),
        SolveStatus::TimeLimit | SolveStatus::NodeLimit if solution.values.is_none() => {
            Err(Error::NotFeasible(format!(
                "{} without an incumbent",
                solution.status
            )))
        }
        _ => {
            let values = solution.values.as_ref().expect("checked above");
            let model = extract_model_from_values(values, &built.catalog, built.arch())?;
            debug_assert_eq!(
                model.empirical_loss(data).unwrap() as f64,
                solution.objective.unwrap_or(f64::NAN),
                "polished objective must equal replay loss"
            );
            Ok(TrainOutcome { model, solution })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::BuildOptions;
    use crate::model::{Architecture, LambdaMode, WeightDomain};

    fn arch(dims: &[usize]) -> Architecture {
        Architecture::new(dims.to_vec(), WeightDomain::ContinuousBox, LambdaMode::Trainable)
            .unwrap()
    }

    #[test]
    fn separable_1d_reaches_zero_loss() {
        let data = Dataset::new(vec![vec![-1.0], vec![1.0]], vec![0, 1]).unwrap();
        let out = train_exact(
            &data,
            &arch(&[1, 1]),
            &BuildOptions::default(),
            &SolverConfig::default(),
            &SolverRoute::Builtin,
        )
        .unwrap();
        assert_eq!(out.solution.status, SolveStatus::Optimal);
        assert_eq!(out.solution.objective, Some(0.0));
        assert_eq!(out.model.empirical_loss(&data).unwrap(), 0);
    }

    #[test]
    fn conflicting_duplicates_cost_exactly_one() {
        let data = Dataset::new(vec![vec![0.4], vec![0.4]], vec![0, 1]).unwrap();
        let out = train_exact(
            &data,
            &arch(&[1, 1]),
            &BuildOptions::default(),
            &SolverConfig::default(),
            &SolverRoute::Builtin,
        )
        .unwrap();
        assert_eq!(out.solution.status, SolveStatus::Optimal);
        assert_eq!(out.solution.objective, Some(1.0));
        assert_eq!(out.model.empirical_loss(&data).unwrap(), 1);
    }

    #[test]
    fn xor_is_solved_to_zero_and_replays() {
        let data = Dataset::new(
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            vec![0, 1, 1, 0],
        )
        .unwrap();
        let out = train_exact(
            &data,
            &arch(&[2, 2, 1]),
            &BuildOptions::default(),
            &SolverConfig::default(),
            &SolverRoute::Builtin,
        )
        .unwrap();
        assert_eq!(out.solution.status, SolveStatus::Optimal);
        assert_eq!(out.solution.objective, Some(0.0));
        assert_eq!(out.model.empirical_loss(&data).unwrap(), 0);
        for (x, y) in data.iter() {
            assert_eq!(out.model.predict(x).unwrap(), y);
        }
    }
}

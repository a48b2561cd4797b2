//! Alternating local search over the two layer-parity subproblems.
//!
//! Fixing the weights, thresholds and hidden activations of every even layer
//! leaves a problem whose bilinear terms all have one fixed factor, hence a
//! linear MILP over the odd layers (and vice versa). The search alternates
//! the two, accepting strict improvements of the replayed loss, and redraws
//! the fixed block at random when a subproblem comes back infeasible.
//! Output activations are never fixed in either subproblem.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::milp::{
    big_m, BuildOptions, LinExpr, MilpProblem, Sense, VarKey, VariableCatalog, VarKind,
};
use crate::model::{Architecture, BdnnModel, LambdaMode, WeightDomain};
use crate::solver::{MilpSolve, SolveStatus, SolverConfig};

/// Which subproblem is being built: `H1` optimizes odd layers, `H2` even.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    H1,
    H2,
}

impl Phase {
    pub fn other(self) -> Self {
        match self {
            Phase::H1 => Phase::H2,
            Phase::H2 => Phase::H1,
        }
    }

    /// Layers whose weights are free in this phase.
    fn frees_layer(self, k: usize) -> bool {
        match self {
            Phase::H1 => k % 2 == 1,
            Phase::H2 => k % 2 == 0,
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::H1 => "H1",
            Phase::H2 => "H2",
        })
    }
}

/// Values held fixed while the other parity is optimized.
#[derive(Debug, Clone, Default)]
pub struct FixationSet {
    /// layer -> row-major weight matrix.
    pub weights: BTreeMap<usize, Vec<f64>>,
    /// layer -> threshold.
    pub lambdas: BTreeMap<usize, f64>,
    /// (point, layer) -> activation pattern.
    pub units: BTreeMap<(usize, usize), Vec<u8>>,
}

impl FixationSet {
    /// Checks the set fixes exactly the layers the phase expects, with values
    /// inside the variable bounds.
    pub fn validate(&self, phase: Phase, arch: &Architecture, num_points: usize) -> Result<()> {
        let depth = arch.depth();
        for k in 1..=depth {
            let fixed = !phase.frees_layer(k);
            if fixed != self.weights.contains_key(&k) {
                return Err(Error::PhaseMismatch(format!(
                    "layer {k} weights {} fixed for {phase}",
                    if fixed { "must be" } else { "must not be" }
                )));
            }
            if arch.lambda_mode == LambdaMode::Trainable && fixed != self.lambdas.contains_key(&k)
            {
                return Err(Error::PhaseMismatch(format!("layer {k} threshold fixation for {phase}")));
            }
            let u_fixed = fixed && k < depth;
            for i in 0..num_points {
                if u_fixed != self.units.contains_key(&(i, k)) {
                    return Err(Error::PhaseMismatch(format!(
                        "activations of layer {k} for point {i} in {phase}"
                    )));
                }
            }
        }
        let (w_lo, w_hi) = match arch.weight_domain {
            WeightDomain::ContinuousBox => (-1.0, 1.0),
            WeightDomain::Binary => (0.0, 1.0),
        };
        for (k, w) in &self.weights {
            if w.len() != arch.layer_weight_count(*k) {
                return Err(Error::PhaseMismatch(format!("layer {k} weight shape")));
            }
            if w.iter().any(|v| *v < w_lo - 1e-9 || *v > w_hi + 1e-9) {
                return Err(Error::PhaseMismatch(format!("layer {k} weights out of bounds")));
            }
        }
        if self.lambdas.values().any(|l| l.abs() > 1.0 + 1e-9) {
            return Err(Error::PhaseMismatch("threshold out of bounds".into()));
        }
        if self.units.values().any(|p| p.iter().any(|&b| b > 1)) {
            return Err(Error::PhaseMismatch("activation fixation not binary".into()));
        }
        Ok(())
    }

    fn lambda(&self, arch: &Architecture, k: usize) -> f64 {
        match arch.lambda_mode {
            LambdaMode::FixedZero => 0.0,
            LambdaMode::Trainable => self.lambdas.get(&k).copied().unwrap_or(0.0),
        }
    }
}

/// One subproblem solve in the trace.
#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub restart: usize,
    pub iteration: usize,
    pub phase: Phase,
    /// Replayed misclassification count of the combined model.
    pub objective: f64,
    pub status: SolveStatus,
    pub seconds: f64,
}

/// Full account of a local-search run.
#[derive(Debug, Clone, Default)]
pub struct SearchTrace {
    pub entries: Vec<TraceEntry>,
    pub restarts: usize,
    pub final_objective: Option<f64>,
}

impl SearchTrace {
    /// CSV with one row per subproblem solve.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("restart,iteration,phase,objective,status,seconds\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{:.3}\n",
                e.restart, e.iteration, e.phase, e.objective, e.status, e.seconds
            ));
        }
        out
    }
}

/// Builds the phase subproblem for the given fixations.
///
/// Every bilinear product in the threshold rows has one factor fixed, so the
/// emitted problem is linear; this is asserted structurally during the build.
pub fn build_subproblem(
    phase: Phase,
    data: &Dataset,
    arch: &Architecture,
    fix: &FixationSet,
    opts: &BuildOptions,
) -> Result<(MilpProblem, VariableCatalog)> {
    fix.validate(phase, arch, data.len())?;
    if data.dim() != arch.input_dim() {
        return Err(Error::DimensionMismatch { expected: arch.input_dim(), got: data.dim() });
    }
    let depth = arch.depth();
    let ms = big_m(arch, data.radius());
    let mut problem = MilpProblem::new(format!("bdnn_{phase}"));
    let mut catalog = VariableCatalog::new();

    let (w_kind, w_lo, w_hi) = match arch.weight_domain {
        WeightDomain::ContinuousBox => (VarKind::Continuous, -1.0, 1.0),
        WeightDomain::Binary => (VarKind::Binary, 0.0, 1.0),
    };
    for k in 1..=depth {
        if phase.frees_layer(k) {
            for j in 0..arch.width(k) {
                for l in 0..arch.width(k - 1) {
                    let key = VarKey::Weight { layer: k, row: j, col: l };
                    let id = problem.add_named_variable(key.name(), w_kind, w_lo, w_hi);
                    catalog.insert(key, id);
                }
            }
            if arch.lambda_mode == LambdaMode::Trainable {
                let key = VarKey::Lambda { layer: k };
                let id = problem.add_named_variable(key.name(), VarKind::Continuous, -1.0, 1.0);
                catalog.insert(key, id);
            }
        }
    }
    let u_free = |k: usize| k == depth || (phase.frees_layer(k) && k < depth);
    for i in 0..data.len() {
        for k in 1..=depth {
            if u_free(k) {
                for j in 0..arch.width(k) {
                    let key = VarKey::Unit { scenario: 0, point: i, layer: k, row: j };
                    let id = problem.add_named_variable(key.name(), VarKind::Binary, 0.0, 1.0);
                    catalog.insert(key, id);
                }
            }
        }
    }

    for (i, x) in data.points().iter().enumerate() {
        for k in 1..=depth {
            let m = ms[k - 1];
            let w_is_free = phase.frees_layer(k);
            for j in 0..arch.width(k) {
                let mut expr = LinExpr::new();
                let mut constant = 0.0;
                for l in 0..arch.width(k - 1) {
                    if k == 1 {
                        if w_is_free {
                            let w = catalog.require(VarKey::Weight { layer: 1, row: j, col: l })?;
                            expr.add_term(w, x[l]);
                        } else {
                            constant += fix.weights[&1][j * arch.width(0) + l] * x[l];
                        }
                    } else {
                        let prev_key = VarKey::Unit { scenario: 0, point: i, layer: k - 1, row: l };
                        let prev_fixed = !u_free(k - 1);
                        if w_is_free && prev_fixed {
                            let a = f64::from(fix.units[&(i, k - 1)][l]);
                            if a != 0.0 {
                                let w = catalog.require(VarKey::Weight { layer: k, row: j, col: l })?;
                                expr.add_term(w, a);
                            }
                        } else if !w_is_free && !prev_fixed {
                            let coef = fix.weights[&k][j * arch.width(k - 1) + l];
                            if coef != 0.0 {
                                expr.add_term(catalog.require(prev_key)?, coef);
                            }
                        } else if !w_is_free && prev_fixed {
                            constant += fix.weights[&k][j * arch.width(k - 1) + l]
                                * f64::from(fix.units[&(i, k - 1)][l]);
                        } else {
                            // Both factors free would make the row bilinear.
                            return Err(Error::Build(format!(
                                "phase {phase} leaves both factors of layer {k} free"
                            )));
                        }
                    }
                }
                if u_free(k) {
                    let u = catalog.require(VarKey::Unit { scenario: 0, point: i, layer: k, row: j })?;
                    expr.add_term(u, -m);
                } else {
                    constant += -m * f64::from(fix.units[&(i, k)][j]);
                }
                if arch.lambda_mode == LambdaMode::Trainable {
                    if phase.frees_layer(k) {
                        let lam = catalog.require(VarKey::Lambda { layer: k })?;
                        expr.add_term(lam, -1.0);
                    } else {
                        constant -= fix.lambdas[&k];
                    }
                }
                problem.add_constraint(
                    format!("act_{i}_{k}_{j}_le"),
                    expr.clone(),
                    Sense::Le,
                    -opts.epsilon - constant,
                );
                problem.add_constraint(
                    format!("act_{i}_{k}_{j}_ge"),
                    expr,
                    Sense::Ge,
                    -m - constant,
                );
            }
        }
    }

    let mut objective = LinExpr::new();
    for (i, &y) in data.labels().iter().enumerate() {
        let out = catalog.require(VarKey::Unit { scenario: 0, point: i, layer: depth, row: 0 })?;
        if y == 0 {
            objective.add_term(out, 1.0);
        } else {
            objective.add_term(out, -1.0);
            objective.constant += 1.0;
        }
    }
    problem.set_objective(objective);
    debug_assert!(problem.validate().is_ok());
    Ok((problem, catalog))
}

/// Merges a subproblem solution with its fixations into a full model.
fn combined_model(
    values: &[f64],
    catalog: &VariableCatalog,
    fix: &FixationSet,
    arch: &Architecture,
) -> Result<BdnnModel> {
    let mut weights = Vec::with_capacity(arch.depth());
    let mut lambdas = Vec::with_capacity(arch.depth());
    for k in 1..=arch.depth() {
        if let Some(w) = fix.weights.get(&k) {
            weights.push(w.clone());
            lambdas.push(fix.lambda(arch, k));
        } else {
            let mut layer = Vec::with_capacity(arch.layer_weight_count(k));
            for j in 0..arch.width(k) {
                for l in 0..arch.width(k - 1) {
                    let id = catalog.require(VarKey::Weight { layer: k, row: j, col: l })?;
                    let raw = values[id.0];
                    layer.push(match arch.weight_domain {
                        WeightDomain::Binary => raw.round().clamp(0.0, 1.0),
                        WeightDomain::ContinuousBox => raw.clamp(-1.0, 1.0),
                    });
                }
            }
            weights.push(layer);
            lambdas.push(match arch.lambda_mode {
                LambdaMode::FixedZero => 0.0,
                LambdaMode::Trainable => {
                    values[catalog.require(VarKey::Lambda { layer: k })?.0].clamp(-1.0, 1.0)
                }
            });
        }
    }
    BdnnModel::new(arch.clone(), weights, lambdas)
}

/// Fixations for `next_phase` read out of the current solution.
fn fixations_from_solution(
    next_phase: Phase,
    arch: &Architecture,
    num_points: usize,
    values: &[f64],
    catalog: &VariableCatalog,
) -> Result<FixationSet> {
    let depth = arch.depth();
    let mut fix = FixationSet::default();
    for k in 1..=depth {
        if next_phase.frees_layer(k) {
            continue;
        }
        let mut layer = Vec::with_capacity(arch.layer_weight_count(k));
        for j in 0..arch.width(k) {
            for l in 0..arch.width(k - 1) {
                let id = catalog.require(VarKey::Weight { layer: k, row: j, col: l })?;
                let raw = values[id.0];
                layer.push(match arch.weight_domain {
                    WeightDomain::Binary => raw.round().clamp(0.0, 1.0),
                    WeightDomain::ContinuousBox => raw.clamp(-1.0, 1.0),
                });
            }
        }
        fix.weights.insert(k, layer);
        if arch.lambda_mode == LambdaMode::Trainable {
            let id = catalog.require(VarKey::Lambda { layer: k })?;
            fix.lambdas.insert(k, values[id.0].clamp(-1.0, 1.0));
        }
        if k < depth {
            for i in 0..num_points {
                let pattern: Vec<u8> = (0..arch.width(k))
                    .map(|j| {
                        let id = catalog
                            .require(VarKey::Unit { scenario: 0, point: i, layer: k, row: j })
                            .expect("free unit present");
                        u8::from(values[id.0] >= 0.5)
                    })
                    .collect();
                fix.units.insert((i, k), pattern);
            }
        }
    }
    Ok(fix)
}

/// Random fixations for the first `H1` solve: even-layer weights and
/// thresholds drawn uniformly from their domains, even hidden activations
/// drawn uniformly from `{0, 1}`.
fn draw_initial_fixations(
    rng: &mut ChaCha8Rng,
    arch: &Architecture,
    num_points: usize,
) -> FixationSet {
    let mut fix = FixationSet::default();
    let depth = arch.depth();
    for k in 1..=depth {
        if Phase::H1.frees_layer(k) {
            continue;
        }
        let count = arch.layer_weight_count(k);
        let layer: Vec<f64> = match arch.weight_domain {
            WeightDomain::ContinuousBox => (0..count).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
            WeightDomain::Binary => (0..count).map(|_| f64::from(rng.gen_range(0..=1))).collect(),
        };
        fix.weights.insert(k, layer);
        if arch.lambda_mode == LambdaMode::Trainable {
            fix.lambdas.insert(k, rng.gen_range(-1.0..=1.0));
        }
        if k < depth {
            for i in 0..num_points {
                let pattern: Vec<u8> =
                    (0..arch.width(k)).map(|_| rng.gen_range(0..=1) as u8).collect();
                fix.units.insert((i, k), pattern);
            }
        }
    }
    fix
}

/// Alternating local search. Runs up to `max_restarts` random
/// initializations, each alternating the two subproblems until the replayed
/// loss stops improving, and returns the best model seen with the full trace.
pub fn local_search(
    data: &Dataset,
    arch: &Architecture,
    opts: &BuildOptions,
    solver: &dyn MilpSolve,
    config: &SolverConfig,
    seed: u64,
    max_restarts: usize,
    max_iters: usize,
) -> Result<(BdnnModel, SearchTrace)> {
    if max_restarts == 0 || max_iters == 0 {
        return Err(Error::Build("max_restarts and max_iters must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = SearchTrace::default();
    let mut best: Option<(BdnnModel, usize)> = None;
    let started = Instant::now();

    let per_solve = SolverConfig {
        time_limit: config.time_limit / (2 * max_iters as u32).max(1),
        ..config.clone()
    };

    'restarts: for restart in 0..max_restarts {
        trace.restarts = restart + 1;
        let mut fix = draw_initial_fixations(&mut rng, arch, data.len());
        let mut phase = Phase::H1;
        let mut restart_best: Option<usize> = None;

        for iteration in 0..max_iters {
            let mut improved = false;
            for _half in 0..2 {
                if started.elapsed() >= config.time_limit {
                    break 'restarts;
                }
                let (problem, catalog) = build_subproblem(phase, data, arch, &fix, opts)?;
                let t0 = Instant::now();
                let solution = solver.solve_milp(&problem, &per_solve)?;
                let seconds = t0.elapsed().as_secs_f64();
                if !solution.status.has_solution() {
                    trace.entries.push(TraceEntry {
                        restart,
                        iteration,
                        phase,
                        objective: f64::NAN,
                        status: solution.status,
                        seconds,
                    });
                    // Infeasible fixations: redraw and try again.
                    continue 'restarts;
                }
                let values = solution.values.as_ref().expect("solution carries values");
                let model = combined_model(values, &catalog, &fix, arch)?;
                let loss = model.empirical_loss(data)?;
                trace.entries.push(TraceEntry {
                    restart,
                    iteration,
                    phase,
                    objective: loss as f64,
                    status: solution.status,
                    seconds,
                });
                if restart_best.map_or(true, |b| loss < b) {
                    restart_best = Some(loss);
                    improved = true;
                }
                if best.as_ref().map_or(true, |(_, b)| loss < *b) {
                    best = Some((model, loss));
                }
                fix = fixations_from_solution(phase.other(), arch, data.len(), values, &catalog)?;
                phase = phase.other();
            }
            if !improved {
                break;
            }
        }
        if matches!(best, Some((_, 0))) {
            break;
        }
    }

    match best {
        Some((model, loss)) => {
            trace.final_objective = Some(loss as f64);
            Ok((model, trace))
        }
        None => Err(Error::AllRestartsInfeasible { restarts: trace.restarts }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::BuiltinSolver;

    fn arch(dims: &[usize]) -> Architecture {
        Architecture::new(dims.to_vec(), WeightDomain::ContinuousBox, LambdaMode::Trainable)
            .unwrap()
    }

    fn xor_data() -> Dataset {
        Dataset::new(
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            vec![0, 1, 1, 0],
        )
        .unwrap()
    }

    #[test]
    fn k2_phase_variable_blocks_match() {
        // H1 for K=2 frees W1, lambda1 and all activations; fixes W2, lambda2.
        let a = arch(&[2, 2, 1]);
        let data = xor_data();
        let mut fix = FixationSet::default();
        fix.weights.insert(2, vec![0.5, -0.5]);
        fix.lambdas.insert(2, 0.1);
        let (p, cat) = build_subproblem(Phase::H1, &data, &a, &fix, &BuildOptions::default()).unwrap();
        assert!(cat.get(VarKey::Weight { layer: 1, row: 0, col: 0 }).is_some());
        assert!(cat.get(VarKey::Lambda { layer: 1 }).is_some());
        assert!(cat.get(VarKey::Weight { layer: 2, row: 0, col: 0 }).is_none());
        assert!(cat.get(VarKey::Lambda { layer: 2 }).is_none());
        for i in 0..4 {
            assert!(cat.get(VarKey::Unit { scenario: 0, point: i, layer: 1, row: 0 }).is_some());
            assert!(cat.get(VarKey::Unit { scenario: 0, point: i, layer: 2, row: 0 }).is_some());
        }
        // w: 4 free of layer 1, lambda1, u: 4 * (2 + 1).
        assert_eq!(p.num_variables(), 4 + 1 + 12);

        // H2 fixes W1, lambda1 and the hidden activations.
        let mut fix2 = FixationSet::default();
        fix2.weights.insert(1, vec![0.1, 0.2, 0.3, 0.4]);
        fix2.lambdas.insert(1, 0.0);
        for i in 0..4 {
            fix2.units.insert((i, 1), vec![1, 0]);
        }
        let (p2, cat2) =
            build_subproblem(Phase::H2, &data, &a, &fix2, &BuildOptions::default()).unwrap();
        assert!(cat2.get(VarKey::Weight { layer: 2, row: 0, col: 0 }).is_some());
        assert!(cat2.get(VarKey::Weight { layer: 1, row: 0, col: 0 }).is_none());
        // w: 2 free of layer 2, lambda2, u: 4 outputs only.
        assert_eq!(p2.num_variables(), 2 + 1 + 4);

        // Together the phases cover at least the full MILP's variables minus
        // the shared outputs (products excluded: subproblems have none).
        let full_vars_minus_products = 6 + 2 + 12;
        assert!(p.num_variables() + p2.num_variables() >= full_vars_minus_products - 4);
    }

    #[test]
    fn h1_with_zero_w2_forces_output_by_lambda_sign() {
        let a = arch(&[2, 2, 1]);
        let data = xor_data();
        let mut fix = FixationSet::default();
        fix.weights.insert(2, vec![0.0, 0.0]);
        fix.lambdas.insert(2, -0.5); // 0 >= -0.5: outputs forced to 1
        let (p, cat) = build_subproblem(Phase::H1, &data, &a, &fix, &BuildOptions::default()).unwrap();
        let sol = crate::solver::solve(&p, &SolverConfig::default()).unwrap();
        assert!(sol.status.has_solution());
        let values = sol.values.unwrap();
        for i in 0..4 {
            let u = cat.require(VarKey::Unit { scenario: 0, point: i, layer: 2, row: 0 }).unwrap();
            assert_eq!(values[u.0], 1.0, "point {i} output must fire");
        }
        // Two points have label 0, so the loss is exactly 2.
        assert_eq!(sol.objective, Some(2.0));
    }

    #[test]
    fn phase_mismatch_is_rejected() {
        let a = arch(&[2, 2, 1]);
        let data = xor_data();
        let fix = FixationSet::default();
        assert!(matches!(
            build_subproblem(Phase::H1, &data, &a, &fix, &BuildOptions::default()),
            Err(Error::PhaseMismatch(_))
        ));
    }

    #[test]
    fn separable_line_reaches_zero_quickly() {
        let data = Dataset::new(vec![vec![-1.0], vec![1.0]], vec![0, 1]).unwrap();
        let (model, trace) = local_search(
            &data,
            &arch(&[1, 1]),
            &BuildOptions::default(),
            &BuiltinSolver,
            &SolverConfig::default(),
            7,
            3,
            50,
        )
        .unwrap();
        assert_eq!(model.empirical_loss(&data).unwrap(), 0);
        assert_eq!(trace.final_objective, Some(0.0));
        // K = 1: the first H1 already contains a zero-loss solution.
        assert!(trace.entries.iter().filter(|e| e.phase == Phase::H1).count() <= 2);
    }

    #[test]
    fn xor_accepted_objectives_non_increasing() {
        let data = xor_data();
        let (model, trace) = local_search(
            &data,
            &arch(&[2, 2, 1]),
            &BuildOptions::default(),
            &BuiltinSolver,
            &SolverConfig::default(),
            3,
            5,
            20,
        )
        .unwrap();
        // Accepted (running-min) objectives never rise within a restart.
        for r in 0..trace.restarts {
            let mut best = f64::INFINITY;
            for e in trace.entries.iter().filter(|e| e.restart == r && !e.objective.is_nan()) {
                let accepted = best.min(e.objective);
                assert!(accepted <= best);
                best = accepted;
            }
        }
        assert!(model.empirical_loss(&data).unwrap() as f64 <= 4.0);
    }
}

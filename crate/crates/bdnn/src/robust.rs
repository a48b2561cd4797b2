//! Two-stage robust training under norm-ball input uncertainty.
//!
//! First-stage weights and thresholds are chosen before the perturbation is
//! revealed; the activations react to it. The column-and-constraint loop
//! alternates a master problem over a growing scenario pool (a lower bound)
//! with per-point adversarial MILPs that find the worst joint perturbation
//! for the current weights (an upper bound). Losses are integers, so the
//! loop stops as soon as the bounds are less than one apart.

use std::time::Instant;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::milp::{
    big_m, big_m_robust_first_layer, emit_first_stage, emit_point_block, loss_expr, BuildOptions,
    LinExpr, MilpProblem, Sense, VarKey, VariableCatalog, VarKind,
};
use crate::model::{Architecture, BdnnModel};
use crate::solver::{solve_with_polisher, SolverConfig};
use crate::trainer::ReplayPolisher;

/// Perturbation norms that keep the adversary a linear MILP. The l2 ball
/// would make it quadratic and is rejected where norms are parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UncertaintyNorm {
    Linf,
    L1,
}

impl UncertaintyNorm {
    pub fn parse(text: &str) -> Result<Self> {
        match text.to_ascii_lowercase().as_str() {
            "linf" | "l_inf" | "inf" | "max" => Ok(UncertaintyNorm::Linf),
            "l1" | "l_1" | "one" => Ok(UncertaintyNorm::L1),
            other => Err(Error::UnsupportedNorm(other.to_string())),
        }
    }
}

impl std::fmt::Display for UncertaintyNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UncertaintyNorm::Linf => "linf",
            UncertaintyNorm::L1 => "l1",
        })
    }
}

/// Per-point perturbation budget.
#[derive(Debug, Clone)]
pub struct UncertaintySpec {
    pub norm: UncertaintyNorm,
    pub radii: Vec<f64>,
}

impl UncertaintySpec {
    pub fn new(norm: UncertaintyNorm, radii: Vec<f64>) -> Result<Self> {
        if radii.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Robust("radii must be finite and nonnegative".into()));
        }
        Ok(Self { norm, radii })
    }

    pub fn uniform(norm: UncertaintyNorm, radius: f64, m: usize) -> Result<Self> {
        Self::new(norm, vec![radius; m])
    }
}

/// One joint perturbation, one vector per training point.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub deltas: Vec<Vec<f64>>,
}

impl Scenario {
    pub fn zero(m: usize, n: usize) -> Self {
        Self { deltas: vec![vec![0.0; n]; m] }
    }

    /// Checks each delta is inside its ball, up to `tol`.
    pub fn validate(&self, spec: &UncertaintySpec, tol: f64) -> Result<()> {
        if self.deltas.len() != spec.radii.len() {
            return Err(Error::Robust("scenario size mismatch".into()));
        }
        for (i, d) in self.deltas.iter().enumerate() {
            let norm = match spec.norm {
                UncertaintyNorm::Linf => d.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                UncertaintyNorm::L1 => d.iter().map(|v| v.abs()).sum(),
            };
            if norm > spec.radii[i] + tol {
                return Err(Error::Robust(format!(
                    "scenario delta {i} has norm {norm} beyond radius {}",
                    spec.radii[i]
                )));
            }
        }
        Ok(())
    }

    fn close_to(&self, other: &Scenario, tol: f64) -> bool {
        self.deltas.len() == other.deltas.len()
            && self
                .deltas
                .iter()
                .zip(&other.deltas)
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol))
    }
}

/// Master problem over the current scenario pool: shared first-stage weights,
/// one copy of all activation/product variables per scenario, and an
/// epigraph objective bounding every scenario's loss.
pub fn build_master(
    data: &Dataset,
    arch: &Architecture,
    scenarios: &[Scenario],
    spec: &UncertaintySpec,
    opts: &BuildOptions,
) -> Result<(MilpProblem, VariableCatalog)> {
    if scenarios.is_empty() {
        return Err(Error::Robust("scenario pool is empty".into()));
    }
    if spec.radii.len() != data.len() {
        return Err(Error::Robust("one radius per training point required".into()));
    }
    if data.dim() != arch.input_dim() {
        return Err(Error::DimensionMismatch { expected: arch.input_dim(), got: data.dim() });
    }
    let mut problem = MilpProblem::new("bdnn_robust_master");
    let mut catalog = VariableCatalog::new();
    emit_first_stage(&mut problem, &mut catalog, arch, opts)?;
    let eta_key = VarKey::Epigraph;
    let eta = problem.add_named_variable(
        eta_key.name(),
        VarKind::Continuous,
        0.0,
        data.len() as f64,
    );
    catalog.insert(eta_key, eta);

    for (s, scenario) in scenarios.iter().enumerate() {
        scenario.validate(spec, 1e-6)?;
        for (i, x) in data.points().iter().enumerate() {
            let x_eff: Vec<f64> =
                x.iter().zip(&scenario.deltas[i]).map(|(a, d)| a + d).collect();
            let m1 = big_m_robust_first_layer(arch.input_dim(), data.radius(), spec.radii[i]);
            emit_point_block(&mut problem, &mut catalog, arch, opts, s, i, &x_eff, m1)?;
        }
        let loss = loss_expr(&catalog, arch, s, data.labels())?;
        let rhs = -loss.constant;
        let mut expr = LinExpr { terms: loss.terms, constant: 0.0 };
        expr.add_term(eta, -1.0);
        problem.add_constraint(format!("epi_s{s}"), expr, Sense::Le, rhs);
    }
    problem.set_objective(LinExpr::new().term(eta, 1.0));
    debug_assert!(problem.validate().is_ok());
    Ok((problem, catalog))
}

/// Outcome of one per-point adversarial solve.
#[derive(Debug, Clone)]
pub struct AdversarialOutcome {
    pub delta: Vec<f64>,
    pub loss: u8,
    /// Whether replaying `forward(x + delta)` reproduces the claimed loss
    /// with no pre-activation inside the epsilon band.
    pub band_free: bool,
    pub replay_consistent: bool,
}

/// Worst-case perturbation of one labeled point for fixed weights.
///
/// Maximizes the 0/1 loss over the ball of radius `point_radius`; activation
/// semantics follow the training model, so a perturbation may not place any
/// pre-activation inside the epsilon band (the adversary is conservative by
/// exactly that band).
pub fn adversarial_point(
    model: &BdnnModel,
    x: &[f64],
    y: u8,
    point_radius: f64,
    norm: UncertaintyNorm,
    epsilon: f64,
    config: &SolverConfig,
) -> Result<AdversarialOutcome> {
    if point_radius < 0.0 || !point_radius.is_finite() {
        return Err(Error::Robust("point radius must be finite and nonnegative".into()));
    }
    let arch = model.arch();
    if x.len() != arch.input_dim() {
        return Err(Error::DimensionMismatch { expected: arch.input_dim(), got: x.len() });
    }
    let n = arch.input_dim();
    let depth = arch.depth();
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    // The weights are fixed here, so the big-M rows must never bind for any
    // admissible perturbation: |W(x+d)| <= n(|x| + r_i), plus 2 to dominate
    // |lambda| + epsilon on the inactive branch. A tight constant would turn
    // legitimate activation patterns infeasible instead of merely loosening
    // the relaxation.
    let m1 = big_m_robust_first_layer(n, x_norm, point_radius) + 2.0;
    let ms: Vec<f64> = big_m(arch, 0.0).iter().map(|m| m + 2.0).collect();

    let mut problem = MilpProblem::new("bdnn_adversary");
    let mut catalog = VariableCatalog::new();

    // Perturbation variables; the l1 ball splits into positive/negative parts.
    let mut delta_expr: Vec<LinExpr> = Vec::with_capacity(n);
    match norm {
        UncertaintyNorm::Linf => {
            for l in 0..n {
                let key = VarKey::Delta { col: l };
                let id = problem.add_named_variable(
                    key.name(),
                    VarKind::Continuous,
                    -point_radius,
                    point_radius,
                );
                catalog.insert(key, id);
                delta_expr.push(LinExpr::new().term(id, 1.0));
            }
        }
        UncertaintyNorm::L1 => {
            let mut budget = LinExpr::new();
            for l in 0..n {
                let kp = VarKey::DeltaPlus { col: l };
                let km = VarKey::DeltaMinus { col: l };
                let p = problem.add_named_variable(kp.name(), VarKind::Continuous, 0.0, point_radius);
                catalog.insert(kp, p);
                let m = problem.add_named_variable(km.name(), VarKind::Continuous, 0.0, point_radius);
                catalog.insert(km, m);
                budget.add_term(p, 1.0);
                budget.add_term(m, 1.0);
                delta_expr.push(LinExpr::new().term(p, 1.0).term(m, -1.0));
            }
            problem.add_constraint("l1_budget", budget, Sense::Le, point_radius);
        }
    }

    for k in 1..=depth {
        for j in 0..arch.width(k) {
            let key = VarKey::Unit { scenario: 0, point: 0, layer: k, row: j };
            let id = problem.add_named_variable(key.name(), VarKind::Binary, 0.0, 1.0);
            catalog.insert(key, id);
        }
    }

    for k in 1..=depth {
        let m = if k == 1 { m1 } else { ms[k - 1] };
        let lambda = model.lambdas()[k - 1];
        for j in 0..arch.width(k) {
            let mut expr = LinExpr::new();
            let mut constant = -lambda;
            if k == 1 {
                for l in 0..n {
                    let w = model.weight(1, j, l);
                    constant += w * x[l];
                    if w != 0.0 {
                        for &(id, c) in &delta_expr[l].terms {
                            expr.add_term(id, w * c);
                        }
                    }
                }
            } else {
                for l in 0..arch.width(k - 1) {
                    let w = model.weight(k, j, l);
                    if w != 0.0 {
                        let u_prev =
                            catalog.require(VarKey::Unit { scenario: 0, point: 0, layer: k - 1, row: l })?;
                        expr.add_term(u_prev, w);
                    }
                }
            }
            let u = catalog.require(VarKey::Unit { scenario: 0, point: 0, layer: k, row: j })?;
            expr.add_term(u, -m);
            problem.add_constraint(
                format!("adv_{k}_{j}_le"),
                expr.clone(),
                Sense::Le,
                -epsilon - constant,
            );
            problem.add_constraint(format!("adv_{k}_{j}_ge"), expr, Sense::Ge, -m - constant);
        }
    }

    // Maximize the misclassification indicator.
    let out = catalog.require(VarKey::Unit { scenario: 0, point: 0, layer: depth, row: 0 })?;
    let objective = if y == 0 {
        LinExpr::new().term(out, -1.0)
    } else {
        LinExpr::new().term(out, 1.0).offset(-1.0)
    };
    problem.set_objective(objective);

    let solution = crate::solver::solve(&problem, config)?;
    if !solution.status.has_solution() {
        return Err(Error::Robust(
            "adversarial subproblem is infeasible; every perturbation lands in a threshold band"
                .into(),
        ));
    }
    let values = solution.values.as_ref().expect("has_solution checked");
    let loss = (-solution.objective.unwrap()).round().clamp(0.0, 1.0) as u8;
    let delta: Vec<f64> = delta_expr
        .iter()
        .map(|e| e.eval(values).clamp(-point_radius, point_radius))
        .collect();

    // Replay the perturbed point through the model.
    let x_adv: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
    let (_, prediction) = model.forward(&x_adv)?;
    let replay_loss = u8::from(prediction != y);
    let acts = crate::model::pre_activations(arch, model.weights(), model.lambdas(), &x_adv);
    let band_free = acts.iter().enumerate().all(|(k, layer)| {
        let lambda = model.lambdas()[k];
        layer.iter().all(|&a| !(a > lambda - epsilon && a < lambda))
    });
    Ok(AdversarialOutcome {
        delta,
        loss,
        band_free,
        replay_consistent: replay_loss == loss,
    })
}

/// One column-and-constraint iteration record.
#[derive(Debug, Clone)]
pub struct CcgIteration {
    pub iteration: usize,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub pool_size: usize,
    pub seconds: f64,
}

/// Bounds, pool and log of a CCG run.
#[derive(Debug, Clone)]
pub struct CcgState {
    pub scenarios: Vec<Scenario>,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub converged: bool,
    pub log: Vec<CcgIteration>,
}

impl CcgState {
    /// CSV with one row per iteration.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,lower_bound,upper_bound,pool_size,seconds\n");
        for e in &self.log {
            out.push_str(&format!(
                "{},{},{},{},{:.3}\n",
                e.iteration, e.lower_bound, e.upper_bound, e.pool_size, e.seconds
            ));
        }
        out
    }
}

/// Limits of the CCG loop itself (each master/adversary solve additionally
/// honors the solver config passed in).
#[derive(Debug, Clone)]
pub struct CcgLimits {
    pub max_iterations: usize,
    pub time_limit: std::time::Duration,
}

impl Default for CcgLimits {
    fn default() -> Self {
        Self { max_iterations: 25, time_limit: std::time::Duration::from_secs(600) }
    }
}

/// Trains a robust model by column-and-constraint generation.
///
/// Starts from the zero scenario, alternates master and adversary, and stops
/// when the integral bounds meet (`UB - LB < 1`), the iteration cap is hit,
/// or time runs out. Returns the best first-stage model with the full state.
pub fn ccg_train(
    data: &Dataset,
    arch: &Architecture,
    spec: &UncertaintySpec,
    opts: &BuildOptions,
    config: &SolverConfig,
    limits: &CcgLimits,
) -> Result<(BdnnModel, CcgState)> {
    let started = Instant::now();
    let mut state = CcgState {
        scenarios: vec![Scenario::zero(data.len(), data.dim())],
        lower_bound: 0.0,
        upper_bound: f64::INFINITY,
        converged: false,
        log: Vec::new(),
    };
    let mut best_model: Option<BdnnModel> = None;

    for iteration in 0.. {
        let iter_start = Instant::now();
        let (problem, catalog) = build_master(data, arch, &state.scenarios, spec, opts)?;
        let scenario_points: Vec<Vec<Vec<f64>>> = state
            .scenarios
            .iter()
            .map(|sc| {
                data.points()
                    .iter()
                    .zip(&sc.deltas)
                    .map(|(x, d)| x.iter().zip(d).map(|(a, b)| a + b).collect())
                    .collect()
            })
            .collect();
        let first_layer_ms: Vec<f64> = spec
            .radii
            .iter()
            .map(|&r_i| big_m_robust_first_layer(arch.input_dim(), data.radius(), r_i))
            .collect();
        let polisher = ReplayPolisher::new(
            &problem,
            &catalog,
            arch,
            opts,
            data.labels(),
            scenario_points,
            first_layer_ms,
        );
        let master = solve_with_polisher(&problem, config, &polisher)?;
        if !master.status.has_solution() {
            return Err(Error::Robust(format!("master problem came back {}", master.status)));
        }
        let master_obj = master.objective.expect("solution has objective");
        // The loss is integral; rounding strips solver tolerance noise.
        state.lower_bound = state.lower_bound.max(master_obj.round());
        let model = crate::milp::extract_model(&master, &catalog, arch)?;

        // Worst joint scenario for the current first stage, one independent
        // MILP per point.
        let outcomes: Vec<AdversarialOutcome> = data
            .points()
            .par_iter()
            .zip(data.labels().par_iter())
            .zip(spec.radii.par_iter())
            .map(|((x, &y), &r)| {
                adversarial_point(&model, x, y, r, spec.norm, opts.epsilon, config)
            })
            .collect::<Result<_>>()?;
        let ub_candidate: f64 = outcomes.iter().map(|o| f64::from(o.loss)).sum();
        if ub_candidate < state.upper_bound {
            state.upper_bound = ub_candidate;
            best_model = Some(model);
        }

        state.log.push(CcgIteration {
            iteration,
            lower_bound: state.lower_bound,
            upper_bound: state.upper_bound,
            pool_size: state.scenarios.len(),
            seconds: iter_start.elapsed().as_secs_f64(),
        });

        if state.upper_bound - state.lower_bound < 1.0 {
            state.converged = true;
            break;
        }
        if iteration + 1 >= limits.max_iterations || started.elapsed() >= limits.time_limit {
            break;
        }
        let scenario = Scenario { deltas: outcomes.into_iter().map(|o| o.delta).collect() };
        if state.scenarios.iter().any(|s| s.close_to(&scenario, 1e-9)) {
            // An exact repeat cannot move the master; the bounds already
            // certify everything they can.
            break;
        }
        state.scenarios.push(scenario);
    }

    let model = best_model.ok_or_else(|| Error::Robust("no first-stage model found".into()))?;
    Ok((model, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::build_nominal;
    use crate::model::{LambdaMode, WeightDomain};
    use crate::trainer::{train_exact, SolverRoute};

    fn arch(dims: &[usize]) -> Architecture {
        Architecture::new(dims.to_vec(), WeightDomain::ContinuousBox, LambdaMode::Trainable)
            .unwrap()
    }

    fn line_model(w: f64, lambda: f64) -> BdnnModel {
        BdnnModel::new(arch(&[1, 1]), vec![vec![w]], vec![lambda]).unwrap()
    }

    #[test]
    fn l2_norm_is_rejected() {
        assert!(matches!(UncertaintyNorm::parse("l2"), Err(Error::UnsupportedNorm(_))));
        assert!(UncertaintyNorm::parse("linf").is_ok());
        assert!(UncertaintyNorm::parse("l1").is_ok());
    }

    #[test]
    fn adversary_flips_reachable_point() {
        // w = 1, lambda = 0, x = 0.5 with label 1: a perturbation below
        // -0.5 - eps flips the sign when the radius allows it.
        let model = line_model(1.0, 0.0);
        let cfg = SolverConfig::default();
        let out =
            adversarial_point(&model, &[0.5], 1, 0.6, UncertaintyNorm::Linf, 1e-4, &cfg).unwrap();
        assert_eq!(out.loss, 1);
        assert!(out.delta[0] <= -0.5 - 1e-4 + 1e-9);
        assert!(out.replay_consistent);

        let out =
            adversarial_point(&model, &[0.5], 1, 0.3, UncertaintyNorm::Linf, 1e-4, &cfg).unwrap();
        assert_eq!(out.loss, 0, "radius 0.3 cannot reach the threshold");
    }

    #[test]
    fn master_with_zero_scenario_matches_nominal() {
        let data = Dataset::new(vec![vec![-1.0], vec![1.0], vec![0.5]], vec![0, 1, 1]).unwrap();
        let a = arch(&[1, 1]);
        let opts = BuildOptions::default();
        let spec = UncertaintySpec::uniform(UncertaintyNorm::Linf, 0.0, data.len()).unwrap();
        let scenarios = vec![Scenario::zero(data.len(), data.dim())];
        let (master, _) = build_master(&data, &a, &scenarios, &spec, &opts).unwrap();
        let master_sol = crate::solver::solve(&master, &SolverConfig::default()).unwrap();

        let built = build_nominal(&data, &a, &opts).unwrap();
        let nominal = crate::solver::solve(&built.problem, &SolverConfig::default()).unwrap();
        assert_eq!(master_sol.objective, nominal.objective);
    }

    #[test]
    fn duplicated_scenarios_do_not_change_the_optimum() {
        let data = Dataset::new(vec![vec![-1.0], vec![1.0]], vec![0, 1]).unwrap();
        let a = arch(&[1, 1]);
        let opts = BuildOptions::default();
        let spec = UncertaintySpec::uniform(UncertaintyNorm::Linf, 0.1, data.len()).unwrap();
        let one = vec![Scenario::zero(2, 1)];
        let two = vec![Scenario::zero(2, 1), Scenario::zero(2, 1)];
        let (p1, _) = build_master(&data, &a, &one, &spec, &opts).unwrap();
        let (p2, _) = build_master(&data, &a, &two, &spec, &opts).unwrap();
        let s1 = crate::solver::solve(&p1, &SolverConfig::default()).unwrap();
        let s2 = crate::solver::solve(&p2, &SolverConfig::default()).unwrap();
        assert_eq!(s1.objective, s2.objective);
        // Variable count: first stage + |S| * per-scenario block + epigraph.
        let first_stage = 1 + 1; // w, lambda for dims (1,1)
        let per_scenario = 2 * 1; // u per point, no products for K = 1
        assert_eq!(p1.num_variables(), first_stage + per_scenario + 1);
        assert_eq!(p2.num_variables(), first_stage + 2 * per_scenario + 1);
    }

    #[test]
    fn zero_radii_reduce_to_nominal_training() {
        let data =
            Dataset::new(vec![vec![-1.0], vec![-0.4], vec![0.6], vec![1.0]], vec![0, 0, 1, 1])
                .unwrap();
        let a = arch(&[1, 1]);
        let opts = BuildOptions::default();
        let cfg = SolverConfig::default();
        let spec = UncertaintySpec::uniform(UncertaintyNorm::Linf, 0.0, data.len()).unwrap();
        let (model, state) =
            ccg_train(&data, &a, &spec, &opts, &cfg, &CcgLimits::default()).unwrap();
        assert!(state.converged);
        assert_eq!(state.log.len(), 1, "radius zero terminates in one iteration");
        let nominal =
            train_exact(&data, &a, &opts, &cfg, &SolverRoute::Builtin).unwrap();
        assert_eq!(state.upper_bound, nominal.solution.objective.unwrap());
        assert_eq!(
            model.empirical_loss(&data).unwrap() as f64,
            nominal.solution.objective.unwrap()
        );
    }

    #[test]
    fn ccg_bounds_sandwich_and_radius_monotonicity() {
        let data = Dataset::new(
            vec![vec![-1.0, 0.2], vec![-0.5, -0.6], vec![0.6, 0.3], vec![0.9, -0.2]],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let a = arch(&[2, 1]);
        let opts = BuildOptions::default();
        let cfg = SolverConfig::default();
        let mut previous = 0.0;
        for radius in [0.0, 0.2, 0.6] {
            let spec = UncertaintySpec::uniform(UncertaintyNorm::Linf, radius, data.len()).unwrap();
            let (_, state) =
                ccg_train(&data, &a, &spec, &opts, &cfg, &CcgLimits::default()).unwrap();
            let mut last_lb = f64::NEG_INFINITY;
            let mut last_ub = f64::INFINITY;
            for e in &state.log {
                assert!(e.lower_bound >= last_lb);
                assert!(e.upper_bound <= last_ub);
                assert!(e.lower_bound <= e.upper_bound + 1e-9);
                last_lb = e.lower_bound;
                last_ub = e.upper_bound;
            }
            assert!(state.converged, "tiny instance must converge");
            assert!(state.upper_bound + 1e-9 >= previous, "worst-case loss grows with radius");
            previous = state.upper_bound;
        }
    }
}

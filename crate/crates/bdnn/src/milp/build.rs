//! Construction of the exact training MILP and the map back to models.
//!
//! The bilinear products `w[k][j][l] * u[i][k-1][l]` that appear from the
//! second layer on are replaced by product variables `s[i][k][l][j]` pinned by
//! four inequalities; the guards reference the layer `k-1` activation, which
//! is the factor actually multiplied into row `j`.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::milp::catalog::{VarKey, VariableCatalog};
use crate::milp::problem::{LinExpr, MilpProblem, Sense, VarKind};
use crate::model::{Architecture, BdnnModel, LambdaMode, WeightDomain};
use crate::solver::{SolveStatus, Solution};

/// Default slack used to relax the strict activation inequalities.
pub const DEFAULT_EPSILON: f64 = 1e-4;

/// Knobs of the MILP construction.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Strict inequalities `<` become `<=` with this subtracted from the rhs.
    pub epsilon: f64,
    /// Per-layer cap on the number of nonzero weights, if any.
    pub sparsity_limit: Option<usize>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, sparsity_limit: None }
    }
}

impl BuildOptions {
    fn validate(&self, arch: &Architecture) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Build("epsilon must be positive".into()));
        }
        if let Some(s) = self.sparsity_limit {
            for k in 1..=arch.depth() {
                if s > arch.layer_weight_count(k) {
                    return Err(Error::Build(format!(
                        "sparsity limit {s} exceeds the {} weights of layer {k}",
                        arch.layer_weight_count(k)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-layer big-M constants: `M_1 = n*r + 1`, `M_k = d_{k-1} + 1` for `k >= 2`.
pub fn big_m(arch: &Architecture, radius: f64) -> Vec<f64> {
    let n = arch.input_dim() as f64;
    (1..=arch.depth())
        .map(|k| if k == 1 { n * radius + 1.0 } else { arch.width(k - 1) as f64 + 1.0 })
        .collect()
}

/// Layer-1 big-M of the robust variant for a point with perturbation radius
/// `r_i`: `n * (r + r_i)`.
pub fn big_m_robust_first_layer(input_dim: usize, data_radius: f64, point_radius: f64) -> f64 {
    input_dim as f64 * (data_radius + point_radius)
}

/// A training MILP together with its catalog and enough context to grow it.
#[derive(Debug, Clone)]
pub struct BdnnMilp {
    pub problem: MilpProblem,
    pub catalog: VariableCatalog,
    arch: Architecture,
    opts: BuildOptions,
    radius: f64,
    num_points: usize,
}

impl BdnnMilp {
    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn opts(&self) -> &BuildOptions {
        &self.opts
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Appends the activation/product variables and all constraint families
    /// for one more training point, updating the objective in place. Existing
    /// variable ids are untouched.
    pub fn add_data_point(&mut self, x: &[f64], y: u8) -> Result<()> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim(),
                got: x.len(),
            });
        }
        if y > 1 {
            return Err(Error::InvalidDataset("label must be 0/1".into()));
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let radius = self.radius.max(norm);
        let m1 = big_m(&self.arch, radius)[0];
        let i = self.num_points;
        emit_point_block(
            &mut self.problem,
            &mut self.catalog,
            &self.arch,
            &self.opts,
            0,
            i,
            x,
            m1,
        )?;
        let out = self.catalog.require(VarKey::Unit {
            scenario: 0,
            point: i,
            layer: self.arch.depth(),
            row: 0,
        })?;
        let objective = self.problem.objective_mut();
        if y == 0 {
            objective.add_term(out, 1.0);
        } else {
            objective.add_term(out, -1.0);
            objective.constant += 1.0;
        }
        self.num_points += 1;
        Ok(())
    }
}

/// Builds the exact training MILP for a dataset and architecture.
///
/// The objective counts misclassified points:
/// `sum_{y^i = 0} u[i][K] + sum_{y^i = 1} (1 - u[i][K])`, with the constant
/// carried explicitly so reported objectives equal misclassification counts.
pub fn build_nominal(
    data: &Dataset,
    arch: &Architecture,
    opts: &BuildOptions,
) -> Result<BdnnMilp> {
    if data.is_empty() {
        return Err(Error::Build("dataset is empty".into()));
    }
    if data.dim() != arch.input_dim() {
        return Err(Error::DimensionMismatch { expected: arch.input_dim(), got: data.dim() });
    }
    opts.validate(arch)?;

    let mut problem = MilpProblem::new("bdnn_train");
    let mut catalog = VariableCatalog::new();
    emit_first_stage(&mut problem, &mut catalog, arch, opts)?;

    let m1 = big_m(arch, data.radius())[0];
    for (i, x) in data.points().iter().enumerate() {
        emit_point_block(&mut problem, &mut catalog, arch, opts, 0, i, x, m1)?;
    }

    let objective = loss_expr(&catalog, arch, 0, data.labels())?;
    problem.set_objective(objective);

    debug_assert!(problem.validate().is_ok());
    Ok(BdnnMilp {
        problem,
        catalog,
        arch: arch.clone(),
        opts: opts.clone(),
        radius: data.radius(),
        num_points: data.len(),
    })
}

/// Creates the shared weight/threshold (and sparsity) variables.
pub(crate) fn emit_first_stage(
    problem: &mut MilpProblem,
    catalog: &mut VariableCatalog,
    arch: &Architecture,
    opts: &BuildOptions,
) -> Result<()> {
    let (kind, lo, hi) = match arch.weight_domain {
        WeightDomain::ContinuousBox => (VarKind::Continuous, -1.0, 1.0),
        WeightDomain::Binary => (VarKind::Binary, 0.0, 1.0),
    };
    for k in 1..=arch.depth() {
        for j in 0..arch.width(k) {
            for l in 0..arch.width(k - 1) {
                let key = VarKey::Weight { layer: k, row: j, col: l };
                let id = problem.add_named_variable(key.name(), kind, lo, hi);
                catalog.insert(key, id);
            }
        }
        if arch.lambda_mode == LambdaMode::Trainable {
            let key = VarKey::Lambda { layer: k };
            let id = problem.add_named_variable(key.name(), VarKind::Continuous, -1.0, 1.0);
            catalog.insert(key, id);
        }
    }
    if let Some(limit) = opts.sparsity_limit {
        for k in 1..=arch.depth() {
            let mut cap = LinExpr::new();
            for j in 0..arch.width(k) {
                for l in 0..arch.width(k - 1) {
                    let zkey = VarKey::SparsityFlag { layer: k, row: j, col: l };
                    let z = problem.add_named_variable(zkey.name(), VarKind::Binary, 0.0, 1.0);
                    catalog.insert(zkey, z);
                    let w = catalog.require(VarKey::Weight { layer: k, row: j, col: l })?;
                    problem.add_constraint(
                        format!("sp_{k}_{j}_{l}_p"),
                        LinExpr::new().term(w, 1.0).term(z, -1.0),
                        Sense::Le,
                        0.0,
                    );
                    problem.add_constraint(
                        format!("sp_{k}_{j}_{l}_n"),
                        LinExpr::new().term(w, 1.0).term(z, 1.0),
                        Sense::Ge,
                        0.0,
                    );
                    cap.add_term(z, 1.0);
                }
            }
            problem.add_constraint(format!("spcap_{k}"), cap, Sense::Le, limit as f64);
        }
    }
    Ok(())
}

/// Emits activation/product variables and all constraint rows for one point
/// of one scenario. `x` is the (possibly perturbed) input, `m1` the layer-1
/// big-M to use for it.
#[allow(clippy::too_many_arguments)]
pub(crate) fn emit_point_block(
    problem: &mut MilpProblem,
    catalog: &mut VariableCatalog,
    arch: &Architecture,
    opts: &BuildOptions,
    scenario: usize,
    point: usize,
    x: &[f64],
    m1: f64,
) -> Result<()> {
    let depth = arch.depth();
    let ms = big_m(arch, 0.0);
    let tag = if scenario == 0 {
        format!("{point}")
    } else {
        format!("s{scenario}_{point}")
    };

    for k in 1..=depth {
        for j in 0..arch.width(k) {
            let key = VarKey::Unit { scenario, point, layer: k, row: j };
            let id = problem.add_named_variable(key.name(), VarKind::Binary, 0.0, 1.0);
            catalog.insert(key, id);
        }
        if k >= 2 {
            for l in 0..arch.width(k - 1) {
                for j in 0..arch.width(k) {
                    let key = VarKey::Product { scenario, point, layer: k, col: l, row: j };
                    let id =
                        problem.add_named_variable(key.name(), VarKind::Continuous, -1.0, 1.0);
                    catalog.insert(key, id);
                }
            }
        }
    }

    for k in 1..=depth {
        let m = if k == 1 { m1 } else { ms[k - 1] };
        for j in 0..arch.width(k) {
            // Pre-activation of unit (k, j) minus M*u and lambda.
            let mut expr = LinExpr::new();
            if k == 1 {
                for l in 0..arch.width(0) {
                    let w = catalog.require(VarKey::Weight { layer: 1, row: j, col: l })?;
                    expr.add_term(w, x[l]);
                }
            } else {
                for l in 0..arch.width(k - 1) {
                    let s =
                        catalog.require(VarKey::Product { scenario, point, layer: k, col: l, row: j })?;
                    expr.add_term(s, 1.0);
                }
            }
            let u = catalog.require(VarKey::Unit { scenario, point, layer: k, row: j })?;
            expr.add_term(u, -m);
            if arch.lambda_mode == LambdaMode::Trainable {
                let lam = catalog.require(VarKey::Lambda { layer: k })?;
                expr.add_term(lam, -1.0);
            }
            problem.add_constraint(
                format!("act_{tag}_{k}_{j}_le"),
                expr.clone(),
                Sense::Le,
                -opts.epsilon,
            );
            problem.add_constraint(format!("act_{tag}_{k}_{j}_ge"), expr, Sense::Ge, -m);
        }
        if k >= 2 {
            for j in 0..arch.width(k) {
                for l in 0..arch.width(k - 1) {
                    let s =
                        catalog.require(VarKey::Product { scenario, point, layer: k, col: l, row: j })?;
                    let w = catalog.require(VarKey::Weight { layer: k, row: j, col: l })?;
                    let u_prev =
                        catalog.require(VarKey::Unit { scenario, point, layer: k - 1, row: l })?;
                    problem.add_constraint(
                        format!("lin_{tag}_{k}_{j}_{l}_a"),
                        LinExpr::new().term(s, 1.0).term(u_prev, -1.0),
                        Sense::Le,
                        0.0,
                    );
                    problem.add_constraint(
                        format!("lin_{tag}_{k}_{j}_{l}_b"),
                        LinExpr::new().term(s, 1.0).term(u_prev, 1.0),
                        Sense::Ge,
                        0.0,
                    );
                    problem.add_constraint(
                        format!("lin_{tag}_{k}_{j}_{l}_c"),
                        LinExpr::new().term(s, 1.0).term(w, -1.0).term(u_prev, 1.0),
                        Sense::Le,
                        1.0,
                    );
                    problem.add_constraint(
                        format!("lin_{tag}_{k}_{j}_{l}_d"),
                        LinExpr::new().term(s, 1.0).term(w, -1.0).term(u_prev, -1.0),
                        Sense::Ge,
                        -1.0,
                    );
                }
            }
        }
    }
    Ok(())
}

/// Misclassification count of one scenario as a linear expression.
pub(crate) fn loss_expr(
    catalog: &VariableCatalog,
    arch: &Architecture,
    scenario: usize,
    labels: &[u8],
) -> Result<LinExpr> {
    let mut expr = LinExpr::new();
    for (i, &y) in labels.iter().enumerate() {
        let out = catalog.require(VarKey::Unit { scenario, point: i, layer: arch.depth(), row: 0 })?;
        if y == 0 {
            expr.add_term(out, 1.0);
        } else {
            expr.add_term(out, -1.0);
            expr.constant += 1.0;
        }
    }
    Ok(expr)
}

/// Reads the weight and threshold values of a solution into a model.
///
/// Binary-domain weights are rounded to the nearest of 0/1 (integrality
/// tolerance); continuous entries are clamped into their boxes.
pub fn extract_model(
    solution: &Solution,
    catalog: &VariableCatalog,
    arch: &Architecture,
) -> Result<BdnnModel> {
    if !matches!(solution.status, SolveStatus::Optimal | SolveStatus::Feasible) {
        return Err(Error::NotFeasible(solution.status.to_string()));
    }
    let values = solution
        .values
        .as_ref()
        .ok_or_else(|| Error::MissingValue("solution carries no values".into()))?;
    extract_model_from_values(values, catalog, arch)
}

/// Same as [`extract_model`] but straight from an assignment vector.
pub fn extract_model_from_values(
    values: &[f64],
    catalog: &VariableCatalog,
    arch: &Architecture,
) -> Result<BdnnModel> {
    let mut weights = Vec::with_capacity(arch.depth());
    for k in 1..=arch.depth() {
        let mut layer = Vec::with_capacity(arch.layer_weight_count(k));
        for j in 0..arch.width(k) {
            for l in 0..arch.width(k - 1) {
                let id = catalog.require(VarKey::Weight { layer: k, row: j, col: l })?;
                let raw = *values
                    .get(id.0)
                    .ok_or_else(|| Error::MissingValue(VarKey::Weight { layer: k, row: j, col: l }.name()))?;
                let w = match arch.weight_domain {
                    WeightDomain::Binary => raw.round().clamp(0.0, 1.0),
                    WeightDomain::ContinuousBox => raw.clamp(-1.0, 1.0),
                };
                layer.push(w);
            }
        }
        weights.push(layer);
    }
    let mut lambdas = Vec::with_capacity(arch.depth());
    for k in 1..=arch.depth() {
        let lam = match arch.lambda_mode {
            LambdaMode::FixedZero => 0.0,
            LambdaMode::Trainable => {
                let id = catalog.require(VarKey::Lambda { layer: k })?;
                values
                    .get(id.0)
                    .copied()
                    .ok_or_else(|| Error::MissingValue(VarKey::Lambda { layer: k }.name()))?
                    .clamp(-1.0, 1.0)
            }
        };
        lambdas.push(lam);
    }
    BdnnModel::new(arch.clone(), weights, lambdas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::problem::VarKind;
    use crate::model::{LambdaMode, WeightDomain};

    fn arch(dims: &[usize], lambda: LambdaMode) -> Architecture {
        Architecture::new(dims.to_vec(), WeightDomain::ContinuousBox, lambda).unwrap()
    }

    fn two_point_data() -> Dataset {
        Dataset::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]).unwrap()
    }

    #[test]
    fn big_m_formula() {
        let a = arch(&[2, 2, 1], LambdaMode::Trainable);
        assert_eq!(big_m(&a, 3.0), vec![7.0, 3.0]);
    }

    #[test]
    fn robust_first_layer_big_m() {
        assert_eq!(big_m_robust_first_layer(2, 3.0, 0.5), 7.0);
        assert_eq!(big_m_robust_first_layer(2, 3.0, 1.0), 8.0);
    }

    #[test]
    fn nominal_counts_match_the_formulas() {
        // m = 2, dims (2,2,1), trainable lambda.
        let a = arch(&[2, 2, 1], LambdaMode::Trainable);
        let built = build_nominal(&two_point_data(), &a, &BuildOptions::default()).unwrap();
        let p = &built.problem;
        let vars = p.variables();
        let w = vars.iter().filter(|v| v.name.starts_with("w_")).count();
        let lam = vars.iter().filter(|v| v.name.starts_with("lam_")).count();
        let u = vars.iter().filter(|v| v.name.starts_with("u_")).count();
        let s = vars.iter().filter(|v| v.name.starts_with("s_")).count();
        assert_eq!((w, lam, u, s), (6, 2, 6, 4));

        let cons = p.constraints();
        // Activation row names are act_{point}_{layer}_{row}_{sense}.
        let act_layer = |c: &&crate::milp::problem::Constraint, k: &str| {
            c.name.starts_with("act") && c.name.split('_').nth(2) == Some(k)
        };
        let layer1 = cons.iter().filter(|c| act_layer(c, "1")).count();
        let layer2 = cons.iter().filter(|c| act_layer(c, "2")).count();
        let lin = cons.iter().filter(|c| c.name.starts_with("lin")).count();
        assert_eq!((layer1, layer2, lin), (8, 4, 16));

        // Binary count: sum_k m*d_k; product count: m * sum_{k>=2} d_{k-1}*d_k.
        assert_eq!(p.num_binary(), 2 * (2 + 1));
        assert_eq!(s, 2 * 2 * 1);
    }

    #[test]
    fn binary_weight_domain_declares_binary_weights() {
        let a = Architecture::new(vec![2, 2, 1], WeightDomain::Binary, LambdaMode::Trainable).unwrap();
        let built = build_nominal(&two_point_data(), &a, &BuildOptions::default()).unwrap();
        for v in built.problem.variables().iter().filter(|v| v.name.starts_with("w_")) {
            assert_eq!(v.kind, VarKind::Binary);
        }
        // Same structure otherwise.
        assert_eq!(built.problem.num_constraints(), 8 + 4 + 16);
    }

    #[test]
    fn fixed_zero_lambda_has_no_lambda_variables() {
        let a = arch(&[2, 2, 1], LambdaMode::FixedZero);
        let built = build_nominal(&two_point_data(), &a, &BuildOptions::default()).unwrap();
        assert!(built.problem.variables().iter().all(|v| !v.name.starts_with("lam_")));
    }

    #[test]
    fn add_data_point_appends_expected_counts() {
        let a = arch(&[2, 2, 1], LambdaMode::Trainable);
        let mut built = build_nominal(&two_point_data(), &a, &BuildOptions::default()).unwrap();
        let vars_before = built.problem.num_variables();
        let cons_before = built.problem.num_constraints();
        built.add_data_point(&[0.5, 0.5], 1).unwrap();
        // +3 activation vars, +2 product vars, +4+2 big-M rows, +8 linearization rows.
        assert_eq!(built.problem.num_variables() - vars_before, 3 + 2);
        assert_eq!(built.problem.num_constraints() - cons_before, 6 + 8);
        assert_eq!(built.num_points(), 3);
    }

    #[test]
    fn sparsity_limit_is_validated() {
        let a = arch(&[2, 2, 1], LambdaMode::Trainable);
        let opts = BuildOptions { sparsity_limit: Some(3), ..Default::default() };
        // Layer 2 only has 2 weights.
        assert!(build_nominal(&two_point_data(), &a, &opts).is_err());
        let opts = BuildOptions { sparsity_limit: Some(2), ..Default::default() };
        let built = build_nominal(&two_point_data(), &a, &opts).unwrap();
        let z = built.problem.variables().iter().filter(|v| v.name.starts_with("z_")).count();
        assert_eq!(z, 6);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let a = arch(&[2, 2, 1], LambdaMode::Trainable);
        let d = Dataset::new(vec![vec![1.0, 1.0]], vec![1]).unwrap();
        assert!(build_nominal(&d, &a, &BuildOptions { epsilon: 0.0, ..Default::default() }).is_err());
    }
}

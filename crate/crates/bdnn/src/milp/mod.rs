//! Exact MILP construction for the training problem.

pub(crate) mod build;
pub(crate) mod catalog;
pub(crate) mod problem;

pub use build::{
    big_m, big_m_robust_first_layer, build_nominal, extract_model, extract_model_from_values,
    BdnnMilp, BuildOptions, DEFAULT_EPSILON,
};
pub(crate) use build::{emit_first_stage, emit_point_block, loss_expr};
pub use catalog::{VarKey, VariableCatalog};
pub use problem::{Constraint, LinExpr, MilpProblem, Sense, VarId, VarKind, Variable, Violation};

//! Generic linear model: variables, bounds, constraints, objective.

use std::fmt;

/// Index of a variable inside one [`MilpProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        })
    }
}

/// Sparse linear expression plus a constant offset.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn term(mut self, var: VarId, coef: f64) -> Self {
        self.terms.push((var, coef));
        self
    }

    pub fn add_term(&mut self, var: VarId, coef: f64) {
        self.terms.push((var, coef));
    }

    pub fn offset(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    /// Evaluates the expression; terms are summed in insertion order.
    pub fn eval(&self, values: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &(v, c) in &self.terms {
            acc += c * values[v.0];
        }
        acc + self.constant
    }
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub expr: LinExpr,
    pub sense: Sense,
    pub rhs: f64,
}

/// First constraint violated by an assignment, if any.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Bound { var: String, value: f64, lower: f64, upper: f64 },
    Integrality { var: String, value: f64 },
    Constraint { name: String, activity: f64, sense: Sense, rhs: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Bound { var, value, lower, upper } => {
                write!(f, "`{var}` = {value} outside [{lower}, {upper}]")
            }
            Violation::Integrality { var, value } => {
                write!(f, "`{var}` = {value} is not integral")
            }
            Violation::Constraint { name, activity, sense, rhs } => {
                write!(f, "constraint `{name}`: activity {activity} violates {sense} {rhs}")
            }
        }
    }
}

/// A mixed-integer linear program, always minimizing.
#[derive(Debug, Clone, Default)]
pub struct MilpProblem {
    pub name: String,
    variables: Vec<Variable>,
    constraints: Vec<Constraint>,
    objective: LinExpr,
}

impl MilpProblem {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Self::default() }
    }

    pub fn add_named_variable(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lower: f64,
        upper: f64,
    ) -> VarId {
        let name = name.into();
        let (lower, upper) = match kind {
            VarKind::Binary => (0.0, 1.0),
            VarKind::Continuous => (lower, upper),
        };
        debug_assert!(lower <= upper, "inverted bounds for {name}");
        self.variables.push(Variable { name, lower, upper, kind });
        VarId(self.variables.len() - 1)
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        expr: LinExpr,
        sense: Sense,
        rhs: f64,
    ) {
        self.constraints.push(Constraint { name: name.into(), expr, sense, rhs });
    }

    pub fn set_objective(&mut self, expr: LinExpr) {
        self.objective = expr;
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn objective_mut(&mut self) -> &mut LinExpr {
        &mut self.objective
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, id: VarId) -> &Variable {
        &self.variables[id.0]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn num_binary(&self) -> usize {
        self.variables.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    /// Checks that every referenced variable exists and binary bounds are 0/1.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.variables.len();
        for (i, v) in self.variables.iter().enumerate() {
            if !v.lower.is_finite() && v.lower != f64::NEG_INFINITY {
                return Err(format!("variable {i} has NaN lower bound"));
            }
            if v.lower > v.upper {
                return Err(format!("variable {i} (`{}`) has inverted bounds", v.name));
            }
            if v.kind == VarKind::Binary && (v.lower < 0.0 || v.upper > 1.0) {
                return Err(format!("binary variable {i} (`{}`) has non-0/1 bounds", v.name));
            }
        }
        for c in &self.constraints {
            for &(VarId(j), coef) in &c.expr.terms {
                if j >= n {
                    return Err(format!("constraint `{}` references unknown variable {j}", c.name));
                }
                if !coef.is_finite() {
                    return Err(format!("constraint `{}` has a non-finite coefficient", c.name));
                }
            }
            if !c.rhs.is_finite() {
                return Err(format!("constraint `{}` has a non-finite rhs", c.name));
            }
        }
        for &(VarId(j), _) in &self.objective.terms {
            if j >= n {
                return Err(format!("objective references unknown variable {j}"));
            }
        }
        Ok(())
    }

    /// True when every integer point has an integer objective value: all
    /// objective terms sit on binary variables with integer coefficients.
    pub fn has_integral_objective(&self) -> bool {
        self.objective.constant.fract() == 0.0
            && self.objective.terms.iter().all(|&(v, c)| {
                self.variables[v.0].kind == VarKind::Binary && c.fract() == 0.0
            })
    }

    /// Verifies an assignment against bounds, integrality and all constraints.
    ///
    /// Constraint activities are evaluated with the crate's plain left-to-right
    /// summation so feasibility here matches the forward-pass arithmetic.
    pub fn check_assignment(&self, values: &[f64], tol: f64) -> Result<(), Violation> {
        assert_eq!(values.len(), self.variables.len(), "assignment length");
        for (i, v) in self.variables.iter().enumerate() {
            let x = values[i];
            if x < v.lower - tol || x > v.upper + tol {
                return Err(Violation::Bound {
                    var: display_name(v, i),
                    value: x,
                    lower: v.lower,
                    upper: v.upper,
                });
            }
            if v.kind == VarKind::Binary && (x - x.round()).abs() > tol {
                return Err(Violation::Integrality { var: display_name(v, i), value: x });
            }
        }
        for c in &self.constraints {
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

fn display_name(v: &Variable, idx: usize) -> String {
    if v.name.is_empty() {
        format!("x{idx}")
    } else {
        v.name.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_bounds_are_forced() {
        let mut p = MilpProblem::new("t");
        let v = p.add_named_variable("b", VarKind::Binary, -3.0, 3.0);
        assert_eq!(p.variable(v).lower, 0.0);
        assert_eq!(p.variable(v).upper, 1.0);
    }

    #[test]
    fn validate_catches_unknown_variable() {
        let mut p = MilpProblem::new("t");
        p.add_constraint("c", LinExpr::new().term(VarId(3), 1.0), Sense::Le, 0.0);
        assert!(p.validate().is_err());
    }

    #[test]
    fn check_assignment_reports_first_violation() {
        let mut p = MilpProblem::new("t");
        let a = p.add_named_variable("a", VarKind::Continuous, 0.0, 1.0);
        p.add_constraint("cap", LinExpr::new().term(a, 2.0), Sense::Le, 1.0);
        assert!(p.check_assignment(&[0.4], 1e-9).is_ok());
        let err = p.check_assignment(&[0.9], 1e-9).unwrap_err();
        assert!(matches!(err, Violation::Constraint { .. }));
    }

    #[test]
    fn integral_objective_detection() {
        let mut p = MilpProblem::new("t");
        let b = p.add_named_variable("b", VarKind::Binary, 0.0, 1.0);
        let c = p.add_named_variable("c", VarKind::Continuous, 0.0, 1.0);
        p.set_objective(LinExpr::new().term(b, 1.0).offset(2.0));
        assert!(p.has_integral_objective());
        p.set_objective(LinExpr::new().term(b, 1.0).term(c, 1.0));
        assert!(!p.has_integral_objective());
        p.set_objective(LinExpr::new().term(b, 0.5));
        assert!(!p.has_integral_objective());
    }
}

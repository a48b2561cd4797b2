//! Free-format MPS writing and a reader for round-trip checks and tests.
//!
//! Numbers are printed with Rust's shortest round-trip formatting, so a
//! write/parse cycle reproduces every coefficient bit for bit. The objective
//! constant rides on the RHS entry of the objective row, negated, which is
//! how the common solvers read it.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::milp::{LinExpr, MilpProblem, Sense, VarId, VarKind};

const OBJ_ROW: &str = "OBJ";

/// Renders a problem as free-format MPS.
pub fn write_mps(problem: &MilpProblem) -> String {
    let mut out = String::new();
    let name = sanitize(&problem.name, "MODEL");
    out.push_str(&format!("NAME {name}\n"));

    let var_names = variable_names(problem);
    let row_names = unique_row_names(problem);

    out.push_str("ROWS\n");
    out.push_str(&format!(" N {OBJ_ROW}\n"));
    for (c, rname) in problem.constraints().iter().zip(&row_names) {
        let tag = match c.sense {
            Sense::Le => 'L',
            Sense::Ge => 'G',
            Sense::Eq => 'E',
        };
        out.push_str(&format!(" {tag} {rname}\n"));
    }

    // Column-major coefficient lists, binaries wrapped in integer markers.
    let n = problem.num_variables();
    let mut col_entries: Vec<Vec<(String, f64)>> = vec![Vec::new(); n];
    for (j, c) in problem.objective().terms.iter().map(|&(VarId(j), c)| (j, c)) {
        col_entries[j].push((OBJ_ROW.to_string(), c));
    }
    for (c, rname) in problem.constraints().iter().zip(&row_names) {
        for &(VarId(j), coef) in &c.expr.terms {
            col_entries[j].push((rname.clone(), coef));
        }
    }

    out.push_str("COLUMNS\n");
    let mut in_integer_block = false;
    let mut marker_count = 0usize;
    for (j, var) in problem.variables().iter().enumerate() {
        let is_int = var.kind == VarKind::Binary;
        if is_int != in_integer_block {
            let tag = if is_int { "INTORG" } else { "INTEND" };
            out.push_str(&format!(" MARKER{marker_count} 'MARKER' '{tag}'\n"));
            marker_count += 1;
            in_integer_block = is_int;
        }
        for (row, coef) in &col_entries[j] {
            out.push_str(&format!(" {} {} {}\n", var_names[j], row, fmt(*coef)));
        }
        if col_entries[j].is_empty() {
            // Keep the column visible so the variable survives a round trip.
            out.push_str(&format!(" {} {} 0\n", var_names[j], OBJ_ROW));
        }
    }
    if in_integer_block {
        out.push_str(&format!(" MARKER{marker_count} 'MARKER' 'INTEND'\n"));
    }

    out.push_str("RHS\n");
    if problem.objective().constant != 0.0 {
        out.push_str(&format!(" RHS {OBJ_ROW} {}\n", fmt(-problem.objective().constant)));
    }
    for (c, rname) in problem.constraints().iter().zip(&row_names) {
        let rhs = c.rhs - c.expr.constant;
        if rhs != 0.0 {
            out.push_str(&format!(" RHS {rname} {}\n", fmt(rhs)));
        }
    }

    out.push_str("BOUNDS\n");
    for (j, var) in problem.variables().iter().enumerate() {
        let vname = &var_names[j];
        if var.lower == var.upper {
            out.push_str(&format!(" FX BND {vname} {}\n", fmt(var.lower)));
            continue;
        }
        if var.lower.is_finite() {
            out.push_str(&format!(" LO BND {vname} {}\n", fmt(var.lower)));
        } else {
            out.push_str(&format!(" MI BND {vname}\n"));
        }
        if var.upper.is_finite() {
            out.push_str(&format!(" UP BND {vname} {}\n", fmt(var.upper)));
        }
    }
    out.push_str("ENDATA\n");
    out
}

fn fmt(v: f64) -> String {
    // Shortest representation that parses back to the same f64.
    format!("{v}")
}

fn sanitize(name: &str, fallback: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
        .collect();
    let cleaned = cleaned.trim_matches('_').to_string();
    let mut cleaned = if cleaned.is_empty() { fallback.to_string() } else { cleaned };
    cleaned.truncate(255);
    cleaned
}

/// Variable names as they appear in the MPS document: catalog-derived names
/// sanitized, with collisions and blanks falling back to the positional id.
/// Solution listings use these same names.
pub fn variable_names(problem: &MilpProblem) -> Vec<String> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    problem
        .variables()
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let base = if v.name.is_empty() {
                format!("x{j}")
            } else {
                sanitize(&v.name, &format!("x{j}"))
            };
            let count = seen.entry(base.clone()).or_insert(0);
            *count += 1;
            if *count == 1 {
                base
            } else {
                format!("{base}.{j}")
            }
        })
        .collect()
}

fn unique_row_names(problem: &MilpProblem) -> Vec<String> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    problem
        .constraints()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let base = if c.name.is_empty() {
                format!("c{i}")
            } else {
                sanitize(&c.name, &format!("c{i}"))
            };
            let count = seen.entry(base.clone()).or_insert(0);
            *count += 1;
            let name = if *count == 1 { base } else { format!("{base}.{i}") };
            if name == OBJ_ROW {
                format!("c{i}")
            } else {
                name
            }
        })
        .collect()
}

/// Parses free-format MPS produced by [`write_mps`] (and the common subset
/// other tools emit): NAME/ROWS/COLUMNS/RHS/RANGES-free/BOUNDS/ENDATA.
pub fn parse_mps(text: &str) -> Result<MilpProblem> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Rows,
        Columns,
        Rhs,
        Bounds,
        Done,
    }

    struct RawVar {
        name: String,
        integer: bool,
        lower: Option<f64>,
        upper: Option<f64>,
        fixed: Option<f64>,
        minus_inf_lower: bool,
    }

    let mut name = String::from("parsed");
    let mut section = Section::None;
    let mut obj_row: Option<String> = None;
    let mut row_order: Vec<(String, Sense)> = Vec::new();
    let mut row_index: HashMap<String, usize> = HashMap::new();
    let mut vars: Vec<RawVar> = Vec::new();
    let mut var_index: HashMap<String, usize> = HashMap::new();
    let mut coeffs: Vec<Vec<(usize, f64)>> = Vec::new(); // per row
    let mut obj_terms: Vec<(usize, f64)> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut obj_rhs = 0.0f64;
    let mut integer_mode = false;

    let bad = |line: &str, why: &str| Error::UnparsableOutput(format!("{why}: `{line}`"));

    for raw_line in text.lines() {
        let line = raw_line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('*') {
            continue;
        }
        let starts_at_margin = !raw_line.starts_with(' ') && !raw_line.starts_with('\t');
        let fields: Vec<&str> = line.split_whitespace().collect();
        if starts_at_margin {
            match fields[0].to_ascii_uppercase().as_str() {
                "NAME" => {
                    if fields.len() > 1 {
                        name = fields[1].to_string();
                    }
                    continue;
                }
                "ROWS" => {
                    section = Section::Rows;
                    continue;
                }
                "COLUMNS" => {
                    section = Section::Columns;
                    continue;
                }
                "RHS" => {
                    section = Section::Rhs;
                    continue;
                }
                "RANGES" => {
                    return Err(bad(line, "RANGES sections are not supported"));
                }
                "BOUNDS" => {
                    section = Section::Bounds;
                    continue;
                }
                "ENDATA" => {
                    section = Section::Done;
                    continue;
                }
                _ => return Err(bad(line, "unknown section header")),
            }
        }
        match section {
            Section::Rows => {
                if fields.len() != 2 {
                    return Err(bad(line, "ROWS entries need a type and a name"));
                }
                let rname = fields[1].to_string();
                match fields[0].to_ascii_uppercase().as_str() {
                    "N" => {
                        if obj_row.is_none() {
                            obj_row = Some(rname);
                        }
                    }
                    "L" => {
                        row_index.insert(rname.clone(), row_order.len());
                        row_order.push((rname, Sense::Le));
                        coeffs.push(Vec::new());
                        rhs.push(0.0);
                    }
                    "G" => {
                        row_index.insert(rname.clone(), row_order.len());
                        row_order.push((rname, Sense::Ge));
                        coeffs.push(Vec::new());
                        rhs.push(0.0);
                    }
                    "E" => {
                        row_index.insert(rname.clone(), row_order.len());
                        row_order.push((rname, Sense::Eq));
                        coeffs.push(Vec::new());
                        rhs.push(0.0);
                    }
                    t => return Err(bad(line, &format!("unknown row type {t}"))),
                }
            }
            Section::Columns => {
                if fields.len() >= 3 && fields[1] == "'MARKER'" {
                    match fields[2] {
                        "'INTORG'" => integer_mode = true,
                        "'INTEND'" => integer_mode = false,
                        _ => return Err(bad(line, "unknown marker")),
                    }
                    continue;
                }
                if fields.len() < 3 || fields.len() % 2 == 0 {
                    return Err(bad(line, "COLUMNS entries come as name + row/value pairs"));
                }
                let vname = fields[0];
                let j = *var_index.entry(vname.to_string()).or_insert_with(|| {
                    vars.push(RawVar {
                        name: vname.to_string(),
                        integer: integer_mode,
                        lower: None,
                        upper: None,
                        fixed: None,
                        minus_inf_lower: false,
                    });
                    vars.len() - 1
                });
                for pair in fields[1..].chunks(2) {
                    let value: f64 = pair[1]
                        .parse()
                        .map_err(|_| bad(line, "coefficient is not a number"))?;
                    if Some(pair[0]) == obj_row.as_deref() {
                        obj_terms.push((j, value));
                    } else if let Some(&r) = row_index.get(pair[0]) {
                        if value != 0.0 {
                            coeffs[r].push((j, value));
                        }
                    } else {
                        return Err(bad(line, "unknown row in COLUMNS"));
                    }
                }
            }
            Section::Rhs => {
                if fields.len() < 3 || fields.len() % 2 == 0 {
                    return Err(bad(line, "RHS entries come as set + row/value pairs"));
                }
                for pair in fields[1..].chunks(2) {
                    let value: f64 =
                        pair[1].parse().map_err(|_| bad(line, "rhs is not a number"))?;
                    if Some(pair[0]) == obj_row.as_deref() {
                        obj_rhs = value;
                    } else if let Some(&r) = row_index.get(pair[0]) {
                        rhs[r] = value;
                    } else {
                        return Err(bad(line, "unknown row in RHS"));
                    }
                }
            }
            Section::Bounds => {
                if fields.len() < 3 {
                    return Err(bad(line, "BOUNDS entries need type, set and variable"));
                }
                let kind = fields[0].to_ascii_uppercase();
                let vname = fields[2];
                let Some(&j) = var_index.get(vname) else {
                    return Err(bad(line, "bound for unknown variable"));
                };
                let value = || -> Result<f64> {
                    fields
                        .get(3)
                        .ok_or_else(|| bad(line, "bound needs a value"))?
                        .parse()
                        .map_err(|_| bad(line, "bound is not a number"))
                };
                match kind.as_str() {
                    "LO" => vars[j].lower = Some(value()?),
                    "UP" => vars[j].upper = Some(value()?),
                    "FX" => vars[j].fixed = Some(value()?),
                    "BV" => {
                        vars[j].integer = true;
                        vars[j].lower = Some(0.0);
                        vars[j].upper = Some(1.0);
                    }
                    "MI" => vars[j].minus_inf_lower = true,
                    "PL" => vars[j].upper = Some(f64::INFINITY),
                    other => return Err(bad(line, &format!("bound type {other} unsupported"))),
                }
            }
            Section::Done | Section::None => {
                return Err(bad(line, "content outside any section"));
            }
        }
    }

    if obj_row.is_none() {
        return Err(Error::UnparsableOutput("no objective row declared".into()));
    }

    let mut problem = MilpProblem::new(name);
    for v in &vars {
        let kind = if v.integer { VarKind::Binary } else { VarKind::Continuous };
        let (lower, upper) = if let Some(f) = v.fixed {
            (f, f)
        } else {
            let lo = if v.minus_inf_lower {
                f64::NEG_INFINITY
            } else {
                v.lower.unwrap_or(0.0)
            };
            let hi = v.upper.unwrap_or(if v.integer { 1.0 } else { f64::INFINITY });
            (lo, hi)
        };
        if v.integer && (lower != 0.0 || upper != 1.0) {
            return Err(Error::UnparsableOutput(format!(
                "integer variable `{}` with bounds [{lower}, {upper}] is not binary; only \
                 binaries are supported",
                v.name
            )));
        }
        problem.add_named_variable(v.name.clone(), kind, lower, upper);
    }
    for (r, (rname, sense)) in row_order.iter().enumerate() {
        let mut expr = LinExpr::new();
        for &(j, c) in &coeffs[r] {
            expr.add_term(VarId(j), c);
        }
        problem.add_constraint(rname.clone(), expr, *sense, rhs[r]);
    }
    let mut objective = LinExpr::new();
    for &(j, c) in &obj_terms {
        if c != 0.0 {
            objective.add_term(VarId(j), c);
        }
    }
    objective.constant = -obj_rhs;
    problem.set_objective(objective);
    problem.validate().map_err(Error::UnparsableOutput)?;
    Ok(problem)
}

/// Structural equality of two problems: counts, kinds, bounds, senses, rhs
/// and coefficients within `tol`. Term order inside a row is not significant.
pub fn structurally_equal(a: &MilpProblem, b: &MilpProblem, tol: f64) -> bool {
    if a.num_variables() != b.num_variables() || a.num_constraints() != b.num_constraints() {
        return false;
    }
    for (va, vb) in a.variables().iter().zip(b.variables()) {
        if va.kind != vb.kind {
            return false;
        }
        if !close(va.lower, vb.lower, tol) || !close(va.upper, vb.upper, tol) {
            return false;
        }
    }
    for (ca, cb) in a.constraints().iter().zip(b.constraints()) {
        if ca.sense != cb.sense {
            return false;
        }
        if !close(ca.rhs - ca.expr.constant, cb.rhs - cb.expr.constant, tol) {
            return false;
        }
        if dense(&ca.expr, a.num_variables())
            .iter()
            .zip(dense(&cb.expr, b.num_variables()))
            .any(|(x, y)| (x - y).abs() > tol)
        {
            return false;
        }
    }
    let oa = dense(a.objective(), a.num_variables());
    let ob = dense(b.objective(), b.num_variables());
    if oa.iter().zip(&ob).any(|(x, y)| (x - y).abs() > tol) {
        return false;
    }
    close(a.objective().constant, b.objective().constant, tol)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol
}

fn dense(expr: &LinExpr, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for &(VarId(j), c) in &expr.terms {
        v[j] += c;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{LinExpr, MilpProblem, Sense, VarKind};

    fn sample() -> MilpProblem {
        let mut p = MilpProblem::new("sample");
        let x = p.add_named_variable("x", VarKind::Continuous, -1.0, 1.0);
        let b = p.add_named_variable("b", VarKind::Binary, 0.0, 1.0);
        let y = p.add_named_variable("y", VarKind::Continuous, 0.0, 2.5);
        p.add_constraint(
            "r1",
            LinExpr::new().term(x, 1.25).term(b, -3.0),
            Sense::Le,
            -1e-4,
        );
        p.add_constraint("r2", LinExpr::new().term(y, 1.0).term(x, 0.5), Sense::Ge, 0.25);
        p.add_constraint("r3", LinExpr::new().term(y, 2.0), Sense::Eq, 1.0);
        p.set_objective(LinExpr::new().term(x, 1.0).term(b, -1.0).offset(2.0));
        p
    }

    #[test]
    fn one_variable_document_shape() {
        let mut p = MilpProblem::new("one");
        p.add_named_variable("only", VarKind::Continuous, 0.0, 1.0);
        let text = write_mps(&p);
        let columns_entries = text
            .lines()
            .skip_while(|l| !l.starts_with("COLUMNS"))
            .skip(1)
            .take_while(|l| !l.starts_with("RHS"))
            .count();
        assert_eq!(columns_entries, 1);
        assert!(text.contains(" LO BND only 0"));
        assert!(text.contains(" UP BND only 1"));
    }

    #[test]
    fn round_trip_is_structurally_identical() {
        let p = sample();
        let text = write_mps(&p);
        let q = parse_mps(&text).unwrap();
        assert!(structurally_equal(&p, &q, 1e-12));
        // And the re-written document is byte-stable.
        assert_eq!(text, write_mps(&q));
    }

    #[test]
    fn integer_markers_round_trip() {
        let p = sample();
        let q = parse_mps(&write_mps(&p)).unwrap();
        assert_eq!(q.variables()[1].kind, VarKind::Binary);
        assert_eq!(q.variables()[0].kind, VarKind::Continuous);
    }

    #[test]
    fn objective_constant_rides_the_rhs() {
        let p = sample();
        let text = write_mps(&p);
        assert!(text.contains(" RHS OBJ -2"));
        let q = parse_mps(&text).unwrap();
        assert_eq!(q.objective().constant, 2.0);
    }

    #[test]
    fn duplicate_names_are_disambiguated() {
        let mut p = MilpProblem::new("dup");
        p.add_named_variable("v", VarKind::Continuous, 0.0, 1.0);
        p.add_named_variable("v", VarKind::Continuous, 0.0, 2.0);
        let text = write_mps(&p);
        let q = parse_mps(&text).unwrap();
        assert_eq!(q.num_variables(), 2);
        assert!(structurally_equal(&p, &q, 1e-12));
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_mps("BOGUS\n x y z\n").is_err());
        assert!(parse_mps("ROWS\n N OBJ\nCOLUMNS\n x NOPE 1\nENDATA\n").is_err());
    }
}

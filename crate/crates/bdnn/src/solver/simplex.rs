//! Bounded-variable primal simplex on a dense tableau.
//!
//! Rows are turned into equalities with one slack each; rows whose all-slack
//! start violates the slack sign get an artificial column, driven out by a
//! phase-1 objective. Nonbasic variables rest on a finite bound, so the only
//! unbounded columns are slacks, which never carry cost. Entering variables
//! are picked by largest reduced cost with a switch to Bland's least-index
//! rule after a run of degenerate pivots.

use crate::error::{Error, Result};
use crate::milp::problem::Sense;

#[derive(Debug, Clone)]
pub(crate) struct SimplexRow {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub(crate) struct SimplexOutcome {
    pub status: LpStatus,
    /// Structural values; meaningful only when optimal.
    pub values: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum VStat {
    Basic(usize),
    AtLower,
    AtUpper,
}

const DJ_TOL: f64 = 1e-9;
const RATIO_TOL: f64 = 1e-9;
const DEGENERATE_STEP: f64 = 1e-12;
const BLAND_TRIGGER: usize = 60;
const REFRESH_EVERY: usize = 64;

struct Tableau {
    m: usize,
    total: usize,
    /// Dense `m x total`, row-major: the current `B^{-1} A`.
    t: Vec<f64>,
    /// `B^{-1} b`.
    beta: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    stat: Vec<VStat>,
    basic: Vec<usize>,
    x_basic: Vec<f64>,
    cost: Vec<f64>,
    /// Reduced costs for the current phase cost vector.
    dj: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.total + j]
    }

    fn value_of(&self, j: usize) -> f64 {
        match self.stat[j] {
            VStat::Basic(r) => self.x_basic[r],
            VStat::AtLower => self.lower[j],
            VStat::AtUpper => self.upper[j],
        }
    }

    /// Recomputes basic values from the tableau and nonbasic rest points.
    fn refresh_basics(&mut self) {
        for i in 0..self.m {
            let mut v = self.beta[i];
            let row = &self.t[i * self.total..(i + 1) * self.total];
            for j in 0..self.total {
                match self.stat[j] {
                    VStat::Basic(_) => {}
                    VStat::AtLower => {
                        let b = self.lower[j];
                        if b != 0.0 {
                            v -= row[j] * b;
                        }
                    }
                    VStat::AtUpper => {
                        let b = self.upper[j];
                        if b != 0.0 {
                            v -= row[j] * b;
                        }
                    }
                }
            }
            self.x_basic[i] = v;
        }
    }

    /// Recomputes reduced costs for the current cost vector.
    fn refresh_dj(&mut self) {
        for j in 0..self.total {
            self.dj[j] = self.cost[j];
        }
        for i in 0..self.m {
            let cb = self.cost[self.basic[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.total..(i + 1) * self.total];
                for j in 0..self.total {
                    self.dj[j] -= cb * row[j];
                }
            }
        }
    }

    fn pick_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.total {
            if matches!(self.stat[j], VStat::Basic(_)) || self.lower[j] >= self.upper[j] {
                continue;
            }
            let attraction = match self.stat[j] {
                VStat::AtLower => -self.dj[j],
                VStat::AtUpper => self.dj[j],
                VStat::Basic(_) => unreachable!(),
            };
            if attraction <= DJ_TOL {
                continue;
            }
            if bland {
                return Some((j, attraction));
            }
            if best.map_or(true, |(_, a)| attraction > a) {
                best = Some((j, attraction));
            }
        }
        best
    }

    /// One simplex iteration. `Ok(None)` means optimal for the current phase;
    /// otherwise returns the objective decrease of the move.
    fn step(&mut self, bland: bool) -> Result<Option<f64>> {
        let Some((q, attraction)) = self.pick_entering(bland) else {
            return Ok(None);
        };
        let dir: f64 = if self.stat[q] == VStat::AtLower { 1.0 } else { -1.0 };

        // Ratio test: how far can the entering variable move before a basic
        // variable blocks, or it reaches its own opposite bound.
        let t_flip = self.upper[q] - self.lower[q];
        let mut t_block = f64::INFINITY;
        let mut block: Option<(usize, bool)> = None; // (row, leaving-to-upper)
        for i in 0..self.m {
            let y = self.at(i, q);
            let eff = dir * y;
            if eff.abs() <= RATIO_TOL {
                continue;
            }
            let b = self.basic[i];
            let (limit, to_upper) = if eff > 0.0 {
                (self.lower[b], false) // basic decreases toward its lower bound
            } else {
                (self.upper[b], true)
            };
            if limit.is_infinite() {
                continue;
            }
            let room = if eff > 0.0 { self.x_basic[i] - limit } else { limit - self.x_basic[i] };
            let ratio = (room / eff.abs()).max(0.0);
            let accept = match block {
                None => true,
                Some((r, _)) => {
                    if ratio < t_block - RATIO_TOL {
                        true
                    } else if ratio <= t_block + RATIO_TOL {
                        if bland {
                            // Least-index rule among ties.
                            self.basic[i] < self.basic[r]
                        } else {
                            // Prefer a larger pivot magnitude, then the lowest
                            // basic variable id, for stability + determinism.
                            let cur = self.at(r, q).abs();
                            let new = y.abs();
                            new > cur * (1.0 + 1e-9)
                                || ((new - cur).abs() <= cur * 1e-9 && self.basic[i] < self.basic[r])
                        }
                    } else {
                        false
                    }
                }
            };
            if accept {
                t_block = t_block.min(ratio);
                block = Some((i, to_upper));
            }
        }

        let t_star = t_flip.min(t_block);
        if t_star.is_infinite() {
            return Err(Error::Numerical(
                "unblocked improving direction; the model is not boxed as required".into(),
            ));
        }

        if t_flip <= t_block + RATIO_TOL {
            // Bound flip: the entering variable crosses to its other bound.
            if t_flip > 0.0 {
                for i in 0..self.m {
                    let y = self.at(i, q);
                    if y != 0.0 {
                        self.x_basic[i] -= dir * t_flip * y;
                    }
                }
            }
            self.stat[q] =
                if self.stat[q] == VStat::AtLower { VStat::AtUpper } else { VStat::AtLower };
            return Ok(Some(t_flip * attraction));
        }

        {
            let (r, to_upper) = block.expect("blocking row exists when no flip");
            let t = t_block.max(0.0);
            let entering_value = self.value_of(q) + dir * t;
            if t > 0.0 {
                for i in 0..self.m {
                    let y = self.at(i, q);
                    if y != 0.0 {
                        self.x_basic[i] -= dir * t * y;
                    }
                }
            }
            let leaving = self.basic[r];
            self.stat[leaving] = if to_upper { VStat::AtUpper } else { VStat::AtLower };

            // Gauss-Jordan elimination so column q becomes unit on row r.
            let p = self.at(r, q);
            if p.abs() < 1e-12 {
                return Err(Error::Numerical(format!(
                    "pivot element {p:.3e} too small at row {r}"
                )));
            }
            let total = self.total;
            {
                let row = &mut self.t[r * total..(r + 1) * total];
                for v in row.iter_mut() {
                    *v /= p;
                }
                self.beta[r] /= p;
            }
            for i in 0..self.m {
                if i == r {
                    continue;
                }
                let f = self.at(i, q);
                if f != 0.0 {
                    let (head, tail) = self.t.split_at_mut(r.max(i) * total);
                    let (src, dst) = if r < i {
                        (&head[r * total..(r + 1) * total], &mut tail[..total])
                    } else {
                        (&tail[..total], &mut head[i * total..(i + 1) * total])
                    };
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d -= f * s;
                        if d.abs() < 1e-13 {
                            *d = 0.0;
                        }
                    }
                    self.beta[i] -= f * self.beta[r];
                }
            }
            let f = self.dj[q];
            if f != 0.0 {
                let row = &self.t[r * total..(r + 1) * total];
                for (d, s) in self.dj.iter_mut().zip(row) {
                    *d -= f * s;
                }
            }
            self.stat[q] = VStat::Basic(r);
            self.basic[r] = q;
            self.x_basic[r] = entering_value;
            Ok(Some(t * attraction))
        }
    }

    fn run_phase(&mut self) -> Result<f64> {
        let mut degenerate_streak = 0usize;
        let mut bland = false;
        loop {
            if self.iterations >= self.max_iterations {
                return Err(Error::IterationLimit(self.iterations));
            }
            self.iterations += 1;
            if self.iterations % REFRESH_EVERY == 0 {
                self.refresh_basics();
                self.refresh_dj();
            }
            match self.step(bland)? {
                None => break,
                Some(progress) => {
                    if progress <= DEGENERATE_STEP {
                        degenerate_streak += 1;
                        if degenerate_streak > BLAND_TRIGGER {
                            bland = true;
                        }
                    } else {
                        degenerate_streak = 0;
                        bland = false;
                    }
                }
            }
        }
        self.refresh_basics();
        let obj: f64 = (0..self.total).map(|j| self.cost[j] * self.value_of(j)).sum();
        Ok(obj)
    }
}

/// Solves a boxed LP. `feas_tol` drives the phase-1 feasibility verdict.
pub(crate) fn solve_bounded(
    bounds: &[(f64, f64)],
    cost_in: &[f64],
    rows: &[SimplexRow],
    feas_tol: f64,
) -> Result<SimplexOutcome> {
    let n = bounds.len();
    let m = rows.len();
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidProblem(format!(
                "variable {j} must have finite bounds for the built-in solver"
            )));
        }
        if lo > hi {
            return Ok(SimplexOutcome { status: LpStatus::Infeasible, values: vec![], iterations: 0 });
        }
    }

    // Start every structural variable on the bound closer to zero.
    let start: Vec<f64> = bounds
        .iter()
        .map(|&(lo, hi)| if lo.abs() <= hi.abs() { lo } else { hi })
        .collect();

    // Count artificials: rows whose all-slack start is outside the slack sign.
    let mut residual = vec![0.0f64; m];
    let mut needs_art = vec![false; m];
    let mut n_art = 0usize;
    for (i, row) in rows.iter().enumerate() {
        let mut act = 0.0;
        for &(j, c) in &row.terms {
            act += c * start[j];
        }
        let rho = row.rhs - act;
        residual[i] = rho;
        let slack_ok = match row.sense {
            Sense::Le => rho >= 0.0,
            Sense::Ge => rho <= 0.0,
            Sense::Eq => rho == 0.0,
        };
        if !slack_ok {
            needs_art[i] = true;
            n_art += 1;
        }
    }

    let total = n + m + n_art;
    let mut lower = vec![0.0f64; total];
    let mut upper = vec![0.0f64; total];
    for j in 0..n {
        lower[j] = bounds[j].0;
        upper[j] = bounds[j].1;
    }
    for (i, row) in rows.iter().enumerate() {
        let s = n + i;
        match row.sense {
            Sense::Le => {
                lower[s] = 0.0;
                upper[s] = f64::INFINITY;
            }
            Sense::Ge => {
                lower[s] = f64::NEG_INFINITY;
                upper[s] = 0.0;
            }
            Sense::Eq => {
                lower[s] = 0.0;
                upper[s] = 0.0;
            }
        }
    }
    for a in 0..n_art {
        lower[n + m + a] = 0.0;
        upper[n + m + a] = f64::INFINITY;
    }

    let mut t = vec![0.0f64; m * total];
    let mut beta = vec![0.0f64; m];
    let mut stat = vec![VStat::AtLower; total];
    for j in 0..n {
        stat[j] = if start[j] == bounds[j].0 { VStat::AtLower } else { VStat::AtUpper };
    }
    let mut basic = Vec::with_capacity(m);
    let mut x_basic = Vec::with_capacity(m);
    let mut art_idx = 0usize;
    for (i, row) in rows.iter().enumerate() {
        let sigma = if needs_art[i] && residual[i] < 0.0 { -1.0 } else { 1.0 };
        let trow = &mut t[i * total..(i + 1) * total];
        for &(j, c) in &row.terms {
            trow[j] += sigma * c;
        }
        trow[n + i] = sigma;
        beta[i] = sigma * row.rhs;
        if needs_art[i] {
            let a = n + m + art_idx;
            art_idx += 1;
            trow[a] = 1.0;
            basic.push(a);
            x_basic.push(residual[i].abs());
        } else {
            basic.push(n + i);
            x_basic.push(residual[i]);
        }
    }
    // Non-basic slacks rest on their zero bound; for >= rows zero is the
    // upper bound.
    for (i, row) in rows.iter().enumerate() {
        let s = n + i;
        stat[s] = match row.sense {
            Sense::Ge => VStat::AtUpper,
            _ => VStat::AtLower,
        };
    }
    for (i, &b) in basic.iter().enumerate() {
        stat[b] = VStat::Basic(i);
    }

    let max_iterations = 2000 + 60 * (m + n);
    let mut tab = Tableau {
        m,
        total,

        t,
        beta,
        lower,
        upper,
        stat,
        basic,
        x_basic,
        cost: vec![0.0; total],
        dj: vec![0.0; total],
        iterations: 0,
        max_iterations,
    };

    let rhs_scale = rows.iter().fold(1.0f64, |s, r| s.max(r.rhs.abs()));

    if n_art > 0 {
        for a in 0..n_art {
            tab.cost[n + m + a] = 1.0;
        }
        tab.refresh_dj();
        let p1 = tab.run_phase()?;
        if p1 > feas_tol * rhs_scale.max(1.0) {
            return Ok(SimplexOutcome {
                status: LpStatus::Infeasible,
                values: vec![],
                iterations: tab.iterations,
            });
        }
        // Pin artificials at zero and forget the phase-1 cost.
        for a in 0..n_art {
            let idx = n + m + a;
            tab.upper[idx] = 0.0;
            tab.cost[idx] = 0.0;
        }
    }

    for j in 0..n {
        tab.cost[j] = cost_in[j];
    }
    for s in 0..m {
        tab.cost[n + s] = 0.0;
    }
    tab.refresh_dj();
    tab.run_phase()?;

    let values: Vec<f64> = (0..n).map(|j| tab.value_of(j)).collect();
    Ok(SimplexOutcome { status: LpStatus::Optimal, values, iterations: tab.iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> SimplexRow {
        SimplexRow { terms, sense, rhs }
    }

    #[test]
    fn one_variable_lower_bounded() {
        // min x s.t. x >= 0.3, x in [0, 1].
        let out = solve_bounded(
            &[(0.0, 1.0)],
            &[1.0],
            &[row(vec![(0, 1.0)], Sense::Ge, 0.3)],
            1e-7,
        )
        .unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.values[0] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn infeasible_pair() {
        let out = solve_bounded(
            &[(0.0, 1.0)],
            &[1.0],
            &[row(vec![(0, 1.0)], Sense::Le, 0.2), row(vec![(0, 1.0)], Sense::Ge, 0.8)],
            1e-7,
        )
        .unwrap();
        assert_eq!(out.status, LpStatus::Infeasible);
    }

    #[test]
    fn classic_two_variable() {
        // min -x - 2y s.t. x + y <= 4, x + 3y <= 6, x,y in [0, 10].
        // Optimum at (3, 1) with value -5.
        let out = solve_bounded(
            &[(0.0, 10.0), (0.0, 10.0)],
            &[-1.0, -2.0],
            &[
                row(vec![(0, 1.0), (1, 1.0)], Sense::Le, 4.0),
                row(vec![(0, 1.0), (1, 3.0)], Sense::Le, 6.0),
            ],
            1e-7,
        )
        .unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        let obj = -out.values[0] - 2.0 * out.values[1];
        assert!((obj + 5.0).abs() < 1e-8, "objective {obj}");
    }

    #[test]
    fn equality_with_negative_bounds() {
        // min x + y s.t. x + y = -1, x,y in [-2, 2]; optimum value -1.
        let out = solve_bounded(
            &[(-2.0, 2.0), (-2.0, 2.0)],
            &[1.0, 1.0],
            &[row(vec![(0, 1.0), (1, 1.0)], Sense::Eq, -1.0)],
            1e-7,
        )
        .unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.values[0] + out.values[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_row_infeasibility() {
        // A row with no variables that cannot hold is reported infeasible.
        let out = solve_bounded(&[(0.0, 1.0)], &[0.0], &[row(vec![], Sense::Ge, 1.0)], 1e-7).unwrap();
        assert_eq!(out.status, LpStatus::Infeasible);
    }

    #[test]
    fn bound_flip_path() {
        // max x + y under x + y <= 1.5 forces one variable onto its upper
        // bound and the slack machinery to block the other.
        let out = solve_bounded(
            &[(0.0, 1.0), (0.0, 1.0)],
            &[-1.0, -1.0],
            &[row(vec![(0, 1.0), (1, 1.0)], Sense::Le, 1.5)],
            1e-7,
        )
        .unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.values[0] + out.values[1] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Many redundant rows through the same vertex.
        let rows: Vec<SimplexRow> = (0..12)
            .map(|k| row(vec![(0, 1.0 + 0.0 * k as f64), (1, 1.0)], Sense::Ge, 1.0))
            .collect();
        let out = solve_bounded(&[(0.0, 2.0), (0.0, 2.0)], &[1.0, 1.0], &rows, 1e-7).unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.values[0] + out.values[1] - 1.0).abs() < 1e-8);
    }
}

//! Bounded-variable primal simplex returning basic feasible solutions.
//!
//! Dense tableau, explicit lower/upper bounds on every structural variable,
//! phase-one artificials and Bland's rule (lowest index) for both entering
//! and leaving choices. A basic solution leaves at most `#rows` structural
//! variables strictly between their bounds, which is the property the
//! primalization step depends on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance at which a variable counts as sitting on a bound.
pub const BOUND_TOL: f64 = 1e-7;
/// Post-scaling feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-7;

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    /// `p × m`, rows `a·u = b`.
    pub eq_rows: DMatrix<f64>,
    pub eq_rhs: Vec<f64>,
    /// `q × m`, rows `a·u ≤ b`.
    pub ineq_rows: DMatrix<f64>,
    pub ineq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpProblem {
    /// Problem over `m` variables in `[0, 1]` with no rows.
    pub fn unit_box(objective: Vec<f64>) -> Self {
        let m = objective.len();
        Self {
            objective,
            eq_rows: DMatrix::zeros(0, m),
            eq_rhs: vec![],
            ineq_rows: DMatrix::zeros(0, m),
            ineq_rhs: vec![],
            lower: vec![0.0; m],
            upper: vec![1.0; m],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.eq_rows.nrows() + self.ineq_rows.nrows()
    }

    pub fn add_eq(&mut self, row: &[f64], rhs: f64) {
        self.eq_rows = append_row(&self.eq_rows, row);
        self.eq_rhs.push(rhs);
    }

    pub fn add_ineq(&mut self, row: &[f64], rhs: f64) {
        self.ineq_rows = append_row(&self.ineq_rows, row);
        self.ineq_rhs.push(rhs);
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_vars();
        if self.eq_rows.ncols() != m
            || self.ineq_rows.ncols() != m
            || self.lower.len() != m
            || self.upper.len() != m
            || self.eq_rhs.len() != self.eq_rows.nrows()
            || self.ineq_rhs.len() != self.ineq_rows.nrows()
        {
            return Err(Error::DimensionMismatch(
                "inconsistent LP dimensions".into(),
            ));
        }
        let all_finite = self
            .objective
            .iter()
            .chain(&self.eq_rhs)
            .chain(&self.ineq_rhs)
            .all(|v| v.is_finite())
            && self
                .eq_rows
                .iter()
                .chain(self.ineq_rows.iter())
                .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidArgument("LP data must be finite".into()));
        }
        for j in 0..m {
            if !(self.lower[j].is_finite()
                && self.upper[j].is_finite()
                && self.lower[j] <= self.upper[j])
            {
                return Err(Error::InvalidArgument(format!(
                    "bad bounds for variable {j}"
                )));
            }
        }
        Ok(())
    }

    /// Largest row violation after scaling each row to unit max-abs.
    pub fn max_violation(&self, u: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (rows, rhs, is_eq) in [
            (&self.eq_rows, &self.eq_rhs, true),
            (&self.ineq_rows, &self.ineq_rhs, false),
        ] {
            for i in 0..rows.nrows() {
                let row = rows.row(i);
                let scale = row_scale(row.iter().copied());
                let lhs: f64 = row.iter().zip(u).map(|(a, b)| a * b).sum();
                let r = (lhs - rhs[i]) / scale;
                worst = worst.max(if is_eq { r.abs() } else { r.max(0.0) });
            }
        }
        for (j, &uj) in u.iter().enumerate() {
            worst = worst.max(self.lower[j] - uj).max(uj - self.upper[j]);
        }
        worst
    }
}

fn append_row(mat: &DMatrix<f64>, row: &[f64]) -> DMatrix<f64> {
    let (p, m) = mat.shape();
    assert_eq!(
        row.len(),
        m,
        "row length must equal the number of variables"
    );
    let mut out = mat.clone().resize_vertically(p + 1, 0.0);
    for (j, v) in row.iter().enumerate() {
        out[(p, j)] = *v;
    }
    out
}

fn row_scale(row: impl Iterator<Item = f64>) -> f64 {
    let s = row.fold(0.0f64, |a, b| a.max(b.abs()));
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub u: Vec<f64>,
    pub status: LpStatus,
    /// Basic columns: structural `j < m`, then one slack per inequality row,
    /// then artificials.
    pub basis: Vec<usize>,
    /// Structural entries strictly between their bounds (at [`BOUND_TOL`]).
    pub nonbound_count: usize,
    pub objective_value: f64,
    pub iterations: usize,
}

/// Replace every equality `a·u = b` by `b − s‖a‖∞ ≤ a·u ≤ b + s‖a‖∞`.
pub fn lp_feasible_with_slack(prob: &LpProblem, slack: f64) -> Result<LpProblem> {
    if !(slack >= 0.0 && slack.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "slack must be nonnegative, got {slack}"
        )));
    }
    if slack == 0.0 {
        return Ok(prob.clone());
    }
    let m = prob.num_vars();
    let mut out = LpProblem {
        eq_rows: DMatrix::zeros(0, m),
        eq_rhs: vec![],
        ..prob.clone()
    };
    for i in 0..prob.eq_rows.nrows() {
        let row: Vec<f64> = prob.eq_rows.row(i).iter().copied().collect();
        let width = slack * row_scale(row.iter().copied());
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        out.add_ineq(&row, prob.eq_rhs[i] + width);
        out.add_ineq(&neg, -prob.eq_rhs[i] + width);
    }
    Ok(out)
}

struct Tableau {
    rows: usize,
    /// Row-major `rows × cols` copy of `B⁻¹A`.
    t: Vec<f64>,
    cols: usize,
    basis: Vec<usize>,
    x: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Reduced costs for the current phase.
    d: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
    /// Row owning each artificial column.
    art_rows: Vec<usize>,
}

enum StepOutcome {
    Optimal,
    Continue,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.cols + j]
    }

    fn set_costs(&mut self, c: &[f64]) {
        let mut d = c.to_vec();
        for i in 0..self.rows {
            let cb = c[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.cols..(i + 1) * self.cols];
                for (dj, tij) in d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        self.d = d;
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let piv = self.at(r, j);
        for v in &mut self.t[r * cols..(r + 1) * cols] {
            *v /= piv;
        }
        let pivot_row: Vec<f64> = self.t[r * cols..(r + 1) * cols].to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * cols + j];
            if f != 0.0 {
                let row = &mut self.t[i * cols..(i + 1) * cols];
                for (a, b) in row.iter_mut().zip(&pivot_row) {
                    *a -= f * b;
                }
                row[j] = 0.0;
            }
        }
        let fd = self.d[j];
        if fd != 0.0 {
            for (a, b) in self.d.iter_mut().zip(&pivot_row) {
                *a -= fd * b;
            }
            self.d[j] = 0.0;
        }
        self.basis[r] = j;
    }

    fn is_basic(&self) -> Vec<bool> {
        let mut b = vec![false; self.cols];
        for &j in &self.basis {
            b[j] = true;
        }
        b
    }

    /// One Bland iteration. `allowed` masks columns that may enter.
    fn step(&mut self, allowed: &[bool]) -> Result<StepOutcome> {
        if self.iterations >= self.max_iterations {
            return Err(Error::LpIterationLimit(self.max_iterations));
        }
        let basic = self.is_basic();
        let mut entering = None;
        for j in 0..self.cols {
            if basic[j] || !allowed[j] || self.hi[j] - self.lo[j] <= 0.0 {
                continue;
            }
            let at_upper = self.x[j] >= self.hi[j];
            if (!at_upper && self.d[j] < -COST_TOL) || (at_upper && self.d[j] > COST_TOL) {
                entering = Some((j, if at_upper { -1.0 } else { 1.0 }));
                break;
            }
        }
        let Some((j, dir)) = entering else {
            return Ok(StepOutcome::Optimal);
        };
        self.iterations += 1;

        // Ratio test; ties go to the lowest-index leaving variable.
        let mut t_best = self.hi[j] - self.lo[j];
        let mut leave: Option<(usize, bool)> = None;
        for i in 0..self.rows {
            let alpha = dir * self.at(i, j);
            let b = self.basis[i];
            let (limit, to_upper) = if alpha > PIVOT_TOL {
                (((self.x[b] - self.lo[b]) / alpha).max(0.0), false)
            } else if alpha < -PIVOT_TOL {
                if self.hi[b].is_infinite() {
                    continue;
                }
                (((self.hi[b] - self.x[b]) / -alpha).max(0.0), true)
            } else {
                continue;
            };
            let better = match leave {
                _ if limit < t_best => true,
                Some((li, _)) if limit == t_best => b < self.basis[li],
                _ => false,
            };
            if better {
                t_best = limit;
                leave = Some((i, to_upper));
            }
        }
        if t_best.is_infinite() {
            return Err(Error::LpUnbounded);
        }
        self.x[j] += dir * t_best;
        for i in 0..self.rows {
            let b = self.basis[i];
            self.x[b] -= dir * t_best * self.at(i, j);
        }
        match leave {
            None => {
                // bound flip
                self.x[j] = if dir > 0.0 { self.hi[j] } else { self.lo[j] };
            }
            Some((r, to_upper)) => {
                let b = self.basis[r];
                self.x[b] = if to_upper { self.hi[b] } else { self.lo[b] };
                self.pivot(r, j);
            }
        }
        Ok(StepOutcome::Continue)
    }

    fn run(&mut self, allowed: &[bool]) -> Result<()> {
        while let StepOutcome::Continue = self.step(allowed)? {}
        Ok(())
    }
}

/// Solve `min cᵀu` over the rows and bounds of `prob`, returning a vertex.
pub fn lp_solve(prob: &LpProblem) -> Result<LpSolution> {
    prob.validate()?;
    let m = prob.num_vars();
    let p = prob.eq_rows.nrows();
    let q = prob.ineq_rows.nrows();
    let rows = p + q;

    // Scaled constraint matrix with slack columns for inequality rows.
    let n_struct = m + q;
    let mut a = DMatrix::<f64>::zeros(rows, n_struct);
    let mut b = vec![0.0; rows];
    for i in 0..p {
        let s = row_scale(prob.eq_rows.row(i).iter().copied());
        for j in 0..m {
            a[(i, j)] = prob.eq_rows[(i, j)] / s;
        }
        b[i] = prob.eq_rhs[i] / s;
    }
    for i in 0..q {
        let s = row_scale(prob.ineq_rows.row(i).iter().copied());
        for j in 0..m {
            a[(p + i, j)] = prob.ineq_rows[(i, j)] / s;
        }
        a[(p + i, m + i)] = 1.0;
        b[p + i] = prob.ineq_rhs[i] / s;
    }

    let mut lo: Vec<f64> = prob.lower.clone();
    let mut hi: Vec<f64> = prob.upper.clone();
    lo.extend(std::iter::repeat_n(0.0, q));
    hi.extend(std::iter::repeat_n(f64::INFINITY, q));
    let mut x: Vec<f64> = lo.clone();

    // Residuals at the all-lower starting point pick the initial basis:
    // a slack when it can absorb the residual, an artificial otherwise.
    let mut basis = Vec::with_capacity(rows);
    let mut art_rows = Vec::new();
    let mut sign = vec![1.0; rows];
    for i in 0..rows {
        let lhs: f64 = (0..m).map(|j| a[(i, j)] * x[j]).sum();
        let r = b[i] - lhs;
        if i >= p && r >= 0.0 {
            basis.push(m + (i - p));
            x[m + (i - p)] = r;
        } else {
            if r < 0.0 {
                sign[i] = -1.0;
            }
            art_rows.push(i);
            basis.push(usize::MAX);
        }
    }
    let n_art = art_rows.len();
    let cols = n_struct + n_art;
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..n_struct {
            t[i * cols + j] = sign[i] * a[(i, j)];
        }
    }
    for (k, &i) in art_rows.iter().enumerate() {
        let col = n_struct + k;
        t[i * cols + col] = 1.0;
        let lhs: f64 = (0..m).map(|j| a[(i, j)] * x[j]).sum();
        basis[i] = col;
        lo.push(0.0);
        hi.push(f64::INFINITY);
        x.push(sign[i] * (b[i] - lhs));
    }
    let mut tab = Tableau {
        rows,
        t,
        cols,
        basis,
        x,
        lo,
        hi,
        d: vec![0.0; cols],
        iterations: 0,
        max_iterations: 50 * (rows + cols) + 1000,
        art_rows,
    };

    let allowed_all = vec![true; cols];
    if n_art > 0 {
        let mut c1 = vec![0.0; cols];
        for c in c1.iter_mut().skip(n_struct) {
            *c = 1.0;
        }
        tab.set_costs(&c1);
        tab.run(&allowed_all)?;
    }
    let infeasibility = (n_struct..cols).map(|j| tab.x[j]).fold(0.0f64, f64::max);
    if infeasibility > FEAS_TOL {
        let u = tab.x[..m].to_vec();
        let objective_value = u.iter().zip(&prob.objective).map(|(a, b)| a * b).sum();
        return Ok(LpSolution {
            nonbound_count: count_nonbound(&u, prob),
            u,
            status: LpStatus::Infeasible,
            basis: tab.basis.clone(),
            objective_value,
            iterations: tab.iterations,
        });
    }

    // Fix artificials at zero and pivot basic ones out where possible.
    for j in n_struct..cols {
        tab.hi[j] = 0.0;
        tab.x[j] = tab.x[j].clamp(0.0, 0.0);
    }
    for r in 0..rows {
        if tab.basis[r] < n_struct {
            continue;
        }
        let basic = tab.is_basic();
        if let Some(j) = (0..n_struct).find(|&j| !basic[j] && tab.at(r, j).abs() > 1e-7) {
            tab.pivot(r, j);
        }
    }

    let mut c2 = prob.objective.clone();
    c2.resize(cols, 0.0);
    tab.set_costs(&c2);
    let mut allowed = vec![true; cols];
    for a in allowed.iter_mut().skip(n_struct) {
        *a = false;
    }
    tab.run(&allowed)?;

    refine_basic_values(&mut tab, &a, &b, &sign, n_struct, m);

    let u = tab.x[..m].to_vec();
    let viol = prob.max_violation(&u);
    let status = if viol <= FEAS_TOL {
        LpStatus::Optimal
    } else {
        LpStatus::Infeasible
    };
    let objective_value = u.iter().zip(&prob.objective).map(|(a, b)| a * b).sum();
    let mut basis: Vec<usize> = tab.basis.clone();
    basis.sort_unstable();
    Ok(LpSolution {
        nonbound_count: count_nonbound(&u, prob),
        u,
        status,
        basis,
        objective_value,
        iterations: tab.iterations,
    })
}

/// Recompute basic values from the scaled rows with a fresh factorization,
/// removing drift accumulated in the tableau.
fn refine_basic_values(
    tab: &mut Tableau,
    a: &DMatrix<f64>,
    b: &[f64],
    sign: &[f64],
    n_struct: usize,
    m: usize,
) {
    let rows = tab.rows;
    if rows == 0 {
        return;
    }
    let column = |j: usize, i: usize| -> f64 {
        if j < n_struct {
            a[(i, j)]
        } else {
            // artificial columns carry the row sign flip
            if tab.art_rows[j - n_struct] == i {
                sign[i]
            } else {
                0.0
            }
        }
    };
    let basic = tab.is_basic();
    let mut rhs = DVector::from_column_slice(b);
    for j in 0..n_struct {
        if !basic[j] && tab.x[j] != 0.0 {
            for i in 0..rows {
                rhs[i] -= a[(i, j)] * tab.x[j];
            }
        }
    }
    let mut bmat = DMatrix::<f64>::zeros(rows, rows);
    for (k, &j) in tab.basis.iter().enumerate() {
        for i in 0..rows {
            bmat[(i, k)] = column(j, i);
        }
    }
    if let Some(sol) = bmat.lu().solve(&rhs) {
        let mut candidate = tab.x.clone();
        for (k, &j) in tab.basis.iter().enumerate() {
            let v = sol[k];
            candidate[j] = if v < tab.lo[j] && v > tab.lo[j] - 1e-9 {
                tab.lo[j]
            } else if v > tab.hi[j] && v < tab.hi[j] + 1e-9 {
                tab.hi[j]
            } else {
                v
            };
        }
        let drift = tab
            .basis
            .iter()
            .map(|&j| (candidate[j] - tab.x[j]).abs())
            .fold(0.0, f64::max);
        if drift.is_finite() && drift < 1e-6 {
            tab.x = candidate;
        }
    }
    for j in 0..m {
        tab.x[j] = tab.x[j].clamp(tab.lo[j], tab.hi[j]);
    }
}

fn count_nonbound(u: &[f64], prob: &LpProblem) -> usize {
    u.iter()
        .enumerate()
        .filter(|(j, &v)| v > prob.lower[*j] + BOUND_TOL && v < prob.upper[*j] - BOUND_TOL)
        .count()
}

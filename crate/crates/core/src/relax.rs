//! Interval relaxations of the four sparse regression families and their
//! dual lower bounds.
//!
//! With `ṽ = u∘v` the relaxation reads
//!
//! ```text
//! min  f(Xṽ) + (γ/2) Σ ṽᵢ²/uᵢ   over u ∈ [0,1]^m, 1ᵀu ≤ k
//! ```
//!
//! (with `λ1ᵀu` in place of the budget for penalized families, and the ridge
//! moved into a constraint `Σ ṽᵢ²/uᵢ ≤ γ` for ball families). It is jointly
//! convex in `(ṽ, u)` and is solved by alternating exact block minimizations.
//! Termination is certified by the Fenchel dual evaluated at `z = ∇f(Xṽ)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    loss_conjugate, loss_gradient, loss_value, Family, Loss, ProblemInstance, SparsityBudget,
};
use crate::spectra::{compact_svd, SvdFactors};

/// Selector entries at or below this value are treated as exactly zero.
pub const FREEZE_TOL: f64 = 1e-12;
const REVIVE_LEVEL: f64 = 1e-2;
const RESIDUAL_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative duality-gap target `gap ≤ tol_obj·(1 + |t|)`.
    pub tol_obj: f64,
    pub max_sweeps: usize,
    /// Optional starting selector, e.g. the neighbouring point of a sweep.
    pub initial_u: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_obj: 1e-7,
            max_sweeps: 10_000,
            initial_u: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelaxedSolution {
    pub family: Family,
    pub u: Vec<f64>,
    /// Magnitudes; zero wherever `u` is zero.
    pub v: Vec<f64>,
    /// `ṽ = u∘v`.
    pub v_tilde: Vec<f64>,
    /// Relaxation objective recomputed from `(u, v)`.
    pub t_star: f64,
    /// Compressed point `Σᵢ uᵢ vᵢ ℓᵢ`, so that `Xṽ = U_r z*`.
    pub z_star: Vec<f64>,
    /// `∇f(Xṽ)`, the Fenchel dual point.
    pub z_dual: Vec<f64>,
    /// Multiplier of the constraint `Xw = z` (equal to `∇f(Xṽ)`).
    pub nu_dual: Vec<f64>,
    /// Multiplier of the ball constraint.
    pub eta: Option<f64>,
    /// Dual lower bound at `z_dual`.
    pub dual_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Rank of the factorization the relaxation was solved on.
    pub rank: usize,
}

impl RelaxedSolution {
    pub fn gap(&self) -> f64 {
        self.t_star - self.dual_value
    }

    /// `Σ ṽᵢ²/uᵢ` with the pseudoinverse convention.
    pub fn quad_term(&self) -> f64 {
        self.u.iter().zip(&self.v).map(|(u, v)| u * v * v).sum()
    }
}

/// Sum of the `k` largest entries of `c`.
pub fn sum_top_k(c: &[f64], k: usize) -> Result<f64> {
    if k > c.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds length {}",
            c.len()
        )));
    }
    let mut sorted = c.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[..k].iter().sum())
}

/// Reverse Huber penalty.
pub fn reverse_huber(zeta: f64) -> f64 {
    let a = zeta.abs();
    if a <= 1.0 {
        a
    } else {
        (zeta * zeta + 1.0) / 2.0
    }
}

/// Capped-simplex water level: the minimizer of `Σ ṽᵢ²/uᵢ` over
/// `u ∈ [0,1]^m, 1ᵀu ≤ k`, together with the level `τ` such that
/// `uᵢ = min(1, |ṽᵢ|/τ)` (`τ = 0` when the budget is slack).
fn waterfill_with_level(vtilde: &[f64], k: usize) -> (Vec<f64>, f64) {
    let s: Vec<f64> = vtilde.iter().map(|v| v.abs()).collect();
    let nnz = s.iter().filter(|&&x| x > 0.0).count();
    if nnz <= k {
        return (
            s.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect(),
            0.0,
        );
    }
    let mut sorted = s.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut tail: f64 = sorted.iter().sum();
    let mut tau = 0.0;
    for c in 0..k {
        tau = tail / (k - c) as f64;
        if sorted[c] <= tau {
            break;
        }
        tail -= sorted[c];
    }
    (s.iter().map(|&x| (x / tau).min(1.0)).collect(), tau)
}

/// Exact minimizer of `Σ ṽᵢ²/uᵢ` over `{u ∈ [0,1]^m, 1ᵀu ≤ k}`.
pub fn u_update_waterfill(vtilde: &[f64], k: usize) -> Vec<f64> {
    waterfill_with_level(vtilde, k).0
}

/// Coordinatewise minimizer of `(γ/2)ṽᵢ²/uᵢ + λuᵢ` over `uᵢ ∈ [0,1]`.
pub fn u_update_penalized(vtilde: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let scale = (gamma / (2.0 * lambda)).sqrt();
    vtilde.iter().map(|v| (scale * v.abs()).min(1.0)).collect()
}

/// `min_{η>0} ηγ/2 + Σ max(0, aᵢ²/(2η) − λ)`, solved exactly over the
/// breakpoints `aᵢ²/(2λ)`. Returns `(η*, value)`.
pub fn ball_penalized_eta(a_sq: &[f64], gamma: f64, lambda: f64) -> (f64, f64) {
    let mut sorted: Vec<f64> = a_sq.iter().copied().filter(|&x| x > 0.0).collect();
    if sorted.is_empty() {
        return (0.0, 0.0);
    }
    sorted.sort_by(|a, b| b.total_cmp(a));
    let h = |eta: f64| -> f64 {
        eta * gamma / 2.0
            + sorted
                .iter()
                .map(|&a| (a / (2.0 * eta) - lambda).max(0.0))
                .sum::<f64>()
    };
    // j active terms on (b_{j+1}, b_j]; the stationary point is clipped to it.
    let mut best = (sorted[0] / (2.0 * lambda), h(sorted[0] / (2.0 * lambda)));
    let mut acc = 0.0;
    for j in 0..sorted.len() {
        acc += sorted[j];
        let hi = sorted[j] / (2.0 * lambda);
        let lo = sorted.get(j + 1).map_or(0.0, |b| b / (2.0 * lambda));
        let eta = (acc / gamma).sqrt().clamp(lo, hi);
        if eta > 0.0 {
            let val = h(eta);
            if val < best.1 {
                best = (eta, val);
            }
        }
    }
    best
}

fn dual_from_parts(
    family: Family,
    budget: SparsityBudget,
    gamma: f64,
    conj: f64,
    a_sq: &[f64],
) -> Result<f64> {
    if conj.is_infinite() {
        return Ok(f64::NEG_INFINITY);
    }
    let value = match (family, budget) {
        (Family::ConstrainedPenalty, SparsityBudget::Constrained(k)) => {
            -conj - sum_top_k(a_sq, k.min(a_sq.len()))? / (2.0 * gamma)
        }
        (Family::PenalizedPenalty, SparsityBudget::Penalized(lambda)) => {
            -conj
                + a_sq
                    .iter()
                    .map(|a| (lambda - a / (2.0 * gamma)).min(0.0))
                    .sum::<f64>()
        }
        (Family::ConstrainedBall, SparsityBudget::Constrained(k)) => {
            -conj - (gamma * sum_top_k(a_sq, k.min(a_sq.len()))?).sqrt()
        }
        (Family::PenalizedBall, SparsityBudget::Penalized(lambda)) => {
            -conj - ball_penalized_eta(a_sq, gamma, lambda).1
        }
        _ => unreachable!("family and budget always agree"),
    };
    Ok(value)
}

/// Fenchel dual lower bound of the instance's family at `z`; `−∞` when `z`
/// lies outside the domain of `f*`.
pub fn dual_value(inst: &ProblemInstance, z: &[f64]) -> Result<f64> {
    if z.len() != inst.n() {
        return Err(Error::DimensionMismatch(format!(
            "z has length {} but n = {}",
            z.len(),
            inst.n()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("z must be finite".into()));
    }
    let conj = loss_conjugate(inst.loss, z, inst.y.as_slice())?;
    let a = inst.x_matrix.tr_mul(&DVector::from_column_slice(z));
    let a_sq: Vec<f64> = a.iter().map(|v| v * v).collect();
    dual_from_parts(inst.family(), inst.budget, inst.ridge.gamma, conj, &a_sq)
}

/// A factorization that reproduces `inst.x_matrix` to working precision:
/// `svd` itself when its residual is negligible, otherwise a fresh compact
/// SVD of the full matrix.
pub fn exact_factors(inst: &ProblemInstance, svd: &SvdFactors) -> Result<SvdFactors> {
    if svd.n() != inst.n() || svd.m() != inst.m() {
        return Err(Error::DimensionMismatch(format!(
            "factors are {}×{} but X is {}×{}",
            svd.n(),
            svd.m(),
            inst.n(),
            inst.m()
        )));
    }
    let scale = inst.x_matrix.norm().max(f64::MIN_POSITIVE);
    let residual = (&inst.x_matrix - svd.low_rank()).norm();
    if residual <= RESIDUAL_RTOL * scale {
        Ok(svd.clone())
    } else {
        compact_svd(&inst.x_matrix, None, Some(1e-13))
    }
}

/// Linear operator `X = U ℓ` with the loss data attached.
struct Operator<'a> {
    u: &'a DMatrix<f64>,
    ell: &'a DMatrix<f64>,
    y: &'a [f64],
    loss: Loss,
}

/// Quantities at a point `ṽ = u∘(ℓᵀβ)`.
#[derive(Clone)]
struct Eval {
    u: DVector<f64>,
    beta: DVector<f64>,
    /// `ℓᵀβ`, the magnitudes on the support of `u`.
    b: DVector<f64>,
    v_tilde: DVector<f64>,
    f_val: f64,
    grad: DVector<f64>,
    /// `Xᵀ∇f`.
    a: DVector<f64>,
    /// `Σ uᵢbᵢ²`.
    quad: f64,
}

#[derive(Clone, Copy)]
enum Budget {
    Cardinality(usize),
    Lambda(f64),
}

impl<'a> Operator<'a> {
    fn n(&self) -> usize {
        self.u.nrows()
    }

    fn gram(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.ell.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= u[j];
        }
        &scaled * self.ell.transpose()
    }

    fn evaluate(&self, u: DVector<f64>, beta: DVector<f64>) -> Result<Eval> {
        let b = self.ell.tr_mul(&beta);
        let v_tilde = u.component_mul(&b);
        let z_star = self.ell * &v_tilde;
        let fit = self.u * &z_star;
        let f_val = loss_value(self.loss, fit.as_slice(), self.y)?;
        let grad = loss_gradient(self.loss, fit.as_slice(), self.y)?;
        let a = self.ell.tr_mul(&self.u.tr_mul(&grad));
        let quad = u.iter().zip(b.iter()).map(|(ui, bi)| ui * bi * bi).sum();
        Ok(Eval {
            u,
            beta,
            b,
            v_tilde,
            f_val,
            grad,
            a,
            quad,
        })
    }

    /// Exact `ṽ`-minimization of `f(Xṽ) + (c/2) Σ ṽᵢ²/uᵢ` for fixed `u`.
    /// The minimizer has the form `ṽ = D(u)ℓᵀβ` with `β ∈ ℝ^r`.
    fn v_step(&self, u: DVector<f64>, c: f64, warm: &DVector<f64>) -> Result<Eval> {
        let r = self.ell.nrows();
        let n = self.n() as f64;
        let m_gram = self.gram(&u);
        match self.loss {
            Loss::Quadratic => {
                let mut a = m_gram;
                for i in 0..r {
                    a[(i, i)] += n * c;
                }
                let rhs = self.u.tr_mul(&DVector::from_column_slice(self.y));
                let beta = match a.clone().cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => a
                        .lu()
                        .solve(&rhs)
                        .ok_or_else(|| Error::Unsupported("singular ridge system".into()))?,
                };
                self.evaluate(u, beta)
            }
            Loss::Logistic => self.logistic_newton(u, c, &m_gram, warm.clone()),
        }
    }

    /// Damped Newton on `F(β) = Uᵀ∇f(UMβ) + cβ = 0`, globalized by Armijo
    /// backtracking on `φ(β) = f(UMβ) + (c/2)βᵀMβ` (`∇φ = M F`).
    fn logistic_newton(
        &self,
        u: DVector<f64>,
        c: f64,
        m_gram: &DMatrix<f64>,
        mut beta: DVector<f64>,
    ) -> Result<Eval> {
        const MAX_NEWTON: usize = 200;
        let r = beta.len();
        let y = self.y;
        let phi = |beta: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
            let zeta = m_gram * beta;
            let fit = self.u * &zeta;
            let val = loss_value(self.loss, fit.as_slice(), y)? + 0.5 * c * beta.dot(&zeta);
            Ok((val, fit))
        };
        let (mut val, mut fit) = phi(&beta)?;
        for step in 0..MAX_NEWTON {
            let grad = loss_gradient(self.loss, fit.as_slice(), y)?;
            let f_res = self.u.tr_mul(&grad) + &beta * c;
            let scale = beta.amax() * c + self.u.tr_mul(&grad).amax();
            if f_res.amax() <= 1e-13 * scale.max(f64::MIN_POSITIVE) || r == 0 {
                return self.evaluate(u, beta);
            }
            // Hessian weights of the logistic loss: σ(1−σ)/n.
            let n = y.len() as f64;
            let mut weighted = self.u.clone();
            for (i, mut row) in weighted.row_iter_mut().enumerate() {
                let s = sigmoid(y[i] * fit[i]);
                row *= s * (1.0 - s) / n;
            }
            let b_mat = self.u.tr_mul(&weighted);
            let mut jac = &b_mat * m_gram;
            for i in 0..r {
                jac[(i, i)] += c;
            }
            let Some(dir) = jac.lu().solve(&(-&f_res)) else {
                return Err(Error::NewtonNoConvergence(step));
            };
            if dir.amax() <= 1e-15 * beta.amax() {
                return self.evaluate(u, beta);
            }
            let slope = (m_gram * &f_res).dot(&dir);
            if slope >= 0.0 || -slope <= 1e-12 * (1.0 + val.abs()) {
                // The objective decrease is below its rounding: judge steps
                // by the residual norm instead.
                let res_norm = f_res.norm();
                let mut t = 1.0;
                let mut accepted = false;
                for _ in 0..40 {
                    let cand = &beta + &dir * t;
                    let (cv, cfit) = phi(&cand)?;
                    let cand_res = self
                        .u
                        .tr_mul(&loss_gradient(self.loss, cfit.as_slice(), y)?)
                        + &cand * c;
                    if cand_res.norm() <= (1.0 - 1e-4 * t) * res_norm {
                        beta = cand;
                        val = cv;
                        fit = cfit;
                        accepted = true;
                        break;
                    }
                    t *= 0.5;
                }
                if !accepted {
                    return self.evaluate(u, beta);
                }
                continue;
            }
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &beta + &dir * t;
                let (cv, cfit) = phi(&cand)?;
                if cv <= val + 1e-4 * t * slope {
                    beta = cand;
                    val = cv;
                    fit = cfit;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                return self.evaluate(u, beta);
            }
        }
        Err(Error::NewtonNoConvergence(MAX_NEWTON))
    }

    /// Primal value of the ridge-`c` relaxation at `e`.
    fn penalty_primal(&self, e: &Eval, c: f64, budget: Budget) -> f64 {
        let mut t = e.f_val + 0.5 * c * e.quad;
        if let Budget::Lambda(lambda) = budget {
            t += lambda * e.u.sum();
        }
        t
    }

    fn conjugate_at(&self, e: &Eval) -> Result<f64> {
        loss_conjugate(self.loss, e.grad.as_slice(), self.y)
    }

    fn penalty_dual(&self, e: &Eval, c: f64, budget: Budget) -> Result<f64> {
        let a_sq: Vec<f64> = e.a.iter().map(|v| v * v).collect();
        let (family, b) = match budget {
            Budget::Cardinality(k) => (Family::ConstrainedPenalty, SparsityBudget::Constrained(k)),
            Budget::Lambda(l) => (Family::PenalizedPenalty, SparsityBudget::Penalized(l)),
        };
        dual_from_parts(family, b, c, self.conjugate_at(e)?, &a_sq)
    }

    fn ball_dual(&self, e: &Eval, gamma: f64, budget: Budget) -> Result<f64> {
        let a_sq: Vec<f64> = e.a.iter().map(|v| v * v).collect();
        let (family, b) = match budget {
            Budget::Cardinality(k) => (Family::ConstrainedBall, SparsityBudget::Constrained(k)),
            Budget::Lambda(l) => (Family::PenalizedBall, SparsityBudget::Penalized(l)),
        };
        dual_from_parts(family, b, gamma, self.conjugate_at(e)?, &a_sq)
    }

    /// Closed-form `u`-block update from the current magnitudes, with
    /// frozen coordinates revived when their KKT condition is violated.
    fn u_step(&self, e: &Eval, c: f64, budget: Budget) -> DVector<f64> {
        let mut s: Vec<f64> = e.v_tilde.iter().map(|v| v.abs()).collect();
        // Revival uses the dual ratio `|(Xᵀz)ᵢ|/c`, which equals |bᵢ| at a
        // v-block optimum and is meaningful even where uᵢ = 0.
        let ratio: Vec<f64> = e.a.iter().map(|a| a.abs() / c).collect();
        let noise = 1e-14 * ratio.iter().fold(0.0f64, |a, &b| a.max(b));
        let mut u = match budget {
            Budget::Cardinality(k) => {
                let (mut u, tau) = waterfill_with_level(&s, k);
                let mut revived = false;
                for i in 0..s.len() {
                    if u[i] <= FREEZE_TOL && ratio[i] > tau * (1.0 + 1e-9) + noise {
                        s[i] = REVIVE_LEVEL * ratio[i];
                        revived = true;
                    }
                }
                if revived {
                    u = waterfill_with_level(&s, k).0;
                }
                u
            }
            Budget::Lambda(lambda) => {
                let level = (2.0 * lambda / c).sqrt();
                for i in 0..s.len() {
                    if e.u[i] <= FREEZE_TOL && ratio[i] > level * (1.0 + 1e-9) + noise {
                        s[i] = REVIVE_LEVEL * ratio[i];
                    }
                }
                u_update_penalized(&s, c, lambda)
            }
        };
        for ui in u.iter_mut() {
            if *ui <= FREEZE_TOL {
                *ui = 0.0;
            }
        }
        DVector::from_vec(u)
    }

    /// Reduced objective `G(u) = min_ṽ [...]` at a v-block optimum.
    fn reduced_value(&self, e: &Eval, c: f64, budget: Budget) -> f64 {
        self.penalty_primal(e, c, budget)
    }

    /// Curvature of `G` restricted to `free`: `c·D(b)ℓᵀ S ℓ D(b)` with
    /// `S = (BM + cI)⁻¹B` and `B` the loss Hessian in the range of `U`.
    fn u_hessian(&self, e: &Eval, c: f64, free: &[usize]) -> Option<DMatrix<f64>> {
        let r = self.ell.nrows();
        let n = self.n() as f64;
        let b_mat = match self.loss {
            Loss::Quadratic => DMatrix::identity(r, r) / n,
            Loss::Logistic => {
                let fit = self.u * (self.ell * &e.v_tilde);
                let mut weighted = self.u.clone();
                for (i, mut row) in weighted.row_iter_mut().enumerate() {
                    let s = sigmoid(self.y[i] * fit[i]);
                    row *= s * (1.0 - s) / n;
                }
                self.u.tr_mul(&weighted)
            }
        };
        let mut jac = &b_mat * self.gram(&e.u);
        for i in 0..r {
            jac[(i, i)] += c;
        }
        let s = jac.lu().solve(&b_mat)?;
        let s = (&s + s.transpose()) * 0.5;
        let mut cols = DMatrix::zeros(r, free.len());
        for (j, &i) in free.iter().enumerate() {
            cols.set_column(j, &(self.ell.column(i) * e.b[i]));
        }
        Some(cols.tr_mul(&(&s * &cols)) * c)
    }

    /// Projected Newton step on `u` over the coordinates that are free to move,
    /// with a backtracking search along the projection arc. `None` when no
    /// sufficient decrease is found.
    fn newton_u(&self, e: &Eval, c: f64, budget: Budget) -> Result<Option<Eval>> {
        const EDGE: f64 = 1e-10;
        let m = e.u.len();
        let lambda = match budget {
            Budget::Lambda(l) => l,
            Budget::Cardinality(_) => 0.0,
        };
        let g: Vec<f64> = e.b.iter().map(|b| -0.5 * c * b * b + lambda).collect();
        let gscale = g
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let interior: Vec<usize> = (0..m)
            .filter(|&i| e.u[i] > EDGE && e.u[i] < 1.0 - EDGE)
            .collect();
        let tight = match budget {
            Budget::Cardinality(k) => k < m && e.u.sum() >= k as f64 - 1e-9,
            Budget::Lambda(_) => false,
        };
        // Estimated budget multiplier, used only to classify bound coordinates.
        let mu = if !tight {
            0.0
        } else if !interior.is_empty() {
            interior.iter().map(|&i| g[i]).sum::<f64>() / interior.len() as f64
        } else {
            // At a vertex, split the difference between the least attractive
            // selected coordinate and the most attractive unselected one, so
            // that any profitable swap shows up on both sides.
            let top = (0..m)
                .filter(|&i| e.u[i] >= 1.0 - EDGE)
                .map(|i| g[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let bottom = (0..m)
                .filter(|&i| e.u[i] <= EDGE)
                .map(|i| g[i])
                .fold(f64::INFINITY, f64::min);
            match (top.is_finite(), bottom.is_finite()) {
                (true, true) => 0.5 * (top + bottom),
                (true, false) => top,
                (false, true) => bottom,
                (false, false) => 0.0,
            }
        };
        let slack = 1e-12 * gscale;
        let free: Vec<usize> = (0..m)
            .filter(|&i| {
                let gi = g[i] - mu;
                (e.u[i] > EDGE && e.u[i] < 1.0 - EDGE)
                    || (e.u[i] <= EDGE && gi < slack)
                    || (e.u[i] >= 1.0 - EDGE && gi > -slack)
            })
            .collect();
        if free.is_empty() || free.len() > NEWTON_MAX_FREE {
            return Ok(None);
        }
        let Some(mut h) = self.u_hessian(e, c, &free) else {
            return Ok(None);
        };
        let nf = free.len();
        let gf = DVector::from_iterator(nf, free.iter().map(|&i| g[i] - mu));
        let hmax = (0..nf)
            .map(|i| h[(i, i)])
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let damping = 1e-10 * hmax + gf.amax();
        for i in 0..nf {
            h[(i, i)] += damping;
        }
        let step = if tight {
            let mut kkt = DMatrix::zeros(nf + 1, nf + 1);
            kkt.view_mut((0, 0), (nf, nf)).copy_from(&h);
            for i in 0..nf {
                kkt[(i, nf)] = 1.0;
                kkt[(nf, i)] = 1.0;
            }
            let mut rhs = DVector::zeros(nf + 1);
            rhs.rows_mut(0, nf).copy_from(&(-&gf));
            match kkt.lu().solve(&rhs) {
                Some(sol) => sol.rows(0, nf).into_owned(),
                None => return Ok(None),
            }
        } else {
            match h.cholesky() {
                Some(ch) => ch.solve(&(-&gf)),
                None => return Ok(None),
            }
        };
        let mut dir = DVector::zeros(m);
        for (j, &i) in free.iter().enumerate() {
            dir[i] = step[j];
        }
        let g_full = DVector::from_vec(g);
        let base = self.reduced_value(e, c, budget);
        let mut t = 1.0;
        for _ in 0..30 {
            let cand = project_u(&(&e.u + &dir * t), budget);
            let moved = &cand - &e.u;
            let pred = g_full.dot(&moved);
            if pred >= 0.0 {
                t *= 0.5;
                continue;
            }
            let trial = self.v_step(cand, c, &e.beta)?;
            let val = self.reduced_value(&trial, c, budget);
            if val < base && val <= base + 1e-4 * pred {
                return Ok(Some(trial));
            }
            t *= 0.5;
        }
        Ok(None)
    }
}

/// Largest free set handled by the Newton step; bigger sets use block updates only.
const NEWTON_MAX_FREE: usize = 400;

/// Euclidean projection onto `[0,1]^m`, intersected with `Σu ≤ k` for a cardinality budget.
fn project_u(x: &DVector<f64>, budget: Budget) -> DVector<f64> {
    let clip = |theta: f64| x.map(|v| (v - theta).clamp(0.0, 1.0));
    let base = clip(0.0);
    let Budget::Cardinality(k) = budget else {
        return base;
    };
    let k = k as f64;
    if base.sum() <= k {
        return base;
    }
    let (mut lo, mut hi) = (0.0, x.max());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clip(mid).sum() > k {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * (1.0 + hi.abs()) {
            break;
        }
    }
    let mut u = clip(hi);
    u.iter_mut().for_each(|v| {
        if *v <= FREEZE_TOL {
            *v = 0.0
        }
    });
    u
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct InnerResult {
    eval: Eval,
    sweeps: usize,
    converged: bool,
}

/// Alternating minimization of the ridge-`c` relaxation.
fn solve_penalty(
    op: &Operator,
    c: f64,
    budget: Budget,
    u0: DVector<f64>,
    beta0: DVector<f64>,
    tol: f64,
    max_sweeps: usize,
) -> Result<InnerResult> {
    let mut e = op.v_step(u0, c, &beta0)?;
    let mut best_dual = f64::NEG_INFINITY;
    for sweep in 0..max_sweeps {
        let primal = op.penalty_primal(&e, c, budget);
        best_dual = best_dual.max(op.penalty_dual(&e, c, budget)?);
        if primal - best_dual <= tol * (1.0 + primal.abs()) {
            return Ok(InnerResult {
                eval: e,
                sweeps: sweep,
                converged: true,
            });
        }
        let u = op.u_step(&e, c, budget);
        let beta = e.beta.clone();
        let block = op.v_step(u, c, &beta)?;
        // The block step with revival need not descend; Newton then starts
        // from whichever point is lower.
        let base = if op.reduced_value(&block, c, budget) <= primal {
            &block
        } else {
            &e
        };
        e = match op.newton_u(base, c, budget)? {
            Some(better) => better,
            None => block,
        };
    }
    Ok(InnerResult {
        eval: e,
        sweeps: max_sweeps,
        converged: false,
    })
}

fn initial_u(inst: &ProblemInstance, opts: &SolverOptions) -> Result<DVector<f64>> {
    let m = inst.m();
    if let Some(u) = &opts.initial_u {
        if u.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "initial u has length {} but m = {m}",
                u.len()
            )));
        }
        return Ok(DVector::from_iterator(
            m,
            u.iter().map(|v| v.clamp(0.0, 1.0)),
        ));
    }
    Ok(match inst.budget {
        SparsityBudget::Constrained(k) => DVector::from_element(m, (k as f64 / m as f64).min(1.0)),
        SparsityBudget::Penalized(_) => DVector::from_element(m, 0.5),
    })
}

/// Solve the interval relaxation of `inst`'s family.
pub fn solve_bidual(
    inst: &ProblemInstance,
    svd: &SvdFactors,
    opts: &SolverOptions,
) -> Result<RelaxedSolution> {
    inst.validate()?;
    if !(opts.tol_obj > 0.0 && opts.tol_obj.is_finite()) || opts.max_sweeps == 0 {
        return Err(Error::InvalidArgument(
            "tol_obj must be positive and max_sweeps nonzero".into(),
        ));
    }
    let factors = exact_factors(inst, svd)?;
    let op = Operator {
        u: &factors.u_r,
        ell: &factors.ell,
        y: inst.y.as_slice(),
        loss: inst.loss,
    };
    let family = inst.family();
    let budget = match inst.budget {
        SparsityBudget::Constrained(k) => Budget::Cardinality(k.min(inst.m())),
        SparsityBudget::Penalized(l) => Budget::Lambda(l),
    };
    let gamma = inst.ridge.gamma;
    let u0 = initial_u(inst, opts)?;
    let beta0 = DVector::zeros(factors.rank());

    let (eval, eta, sweeps, converged) = if family.is_ball() {
        let out = solve_ball(&op, gamma, budget, u0, beta0, opts)?;
        (out.eval, Some(out.eta), out.sweeps, out.converged)
    } else {
        let out = solve_penalty(&op, gamma, budget, u0, beta0, opts.tol_obj, opts.max_sweeps)?;
        (out.eval, None, out.sweeps, out.converged)
    };
    finish(inst, &factors, family, eval, eta, sweeps, converged)
}

fn finish(
    inst: &ProblemInstance,
    factors: &SvdFactors,
    family: Family,
    e: Eval,
    eta: Option<f64>,
    iterations: usize,
    converged: bool,
) -> Result<RelaxedSolution> {
    let u: Vec<f64> = e.u.iter().copied().collect();
    let v: Vec<f64> = u
        .iter()
        .zip(e.b.iter())
        .map(|(&ui, &bi)| if ui > 0.0 { bi } else { 0.0 })
        .collect();
    let v_tilde: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a * b).collect();
    let z_star = &factors.ell * DVector::from_column_slice(&v_tilde);
    let fit = &factors.u_r * &z_star;
    let mut t_star = loss_value(inst.loss, fit.as_slice(), inst.y.as_slice())?;
    if !family.is_ball() {
        t_star += 0.5 * inst.ridge.gamma * u.iter().zip(&v).map(|(a, b)| a * b * b).sum::<f64>();
    }
    if let SparsityBudget::Penalized(lambda) = inst.budget {
        t_star += lambda * u.iter().sum::<f64>();
    }
    let z_dual: Vec<f64> = loss_gradient(inst.loss, fit.as_slice(), inst.y.as_slice())?
        .iter()
        .copied()
        .collect();
    let dual = dual_value(inst, &z_dual)?;
    Ok(RelaxedSolution {
        family,
        u,
        v,
        v_tilde,
        t_star,
        z_star: z_star.iter().copied().collect(),
        nu_dual: z_dual.clone(),
        z_dual,
        eta,
        dual_value: dual,
        iterations,
        converged,
        rank: factors.rank(),
    })
}

/// Fenchel dual point and equality-constraint multiplier at the relaxed point.
pub fn extract_dual_point(
    inst: &ProblemInstance,
    sol: &RelaxedSolution,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if sol.v_tilde.len() != inst.m() {
        return Err(Error::DimensionMismatch(
            "solution does not match the instance".into(),
        ));
    }
    let fit = &inst.x_matrix * DVector::from_column_slice(&sol.v_tilde);
    let z: Vec<f64> = loss_gradient(inst.loss, fit.as_slice(), inst.y.as_slice())?
        .iter()
        .copied()
        .collect();
    Ok((z.clone(), z))
}

struct BallResult {
    eval: Eval,
    eta: f64,
    sweeps: usize,
    converged: bool,
}

struct Probe {
    log_eta: f64,
    inner: InnerResult,
}

impl Probe {
    fn excess(&self, gamma: f64) -> f64 {
        self.inner.eval.quad - gamma
    }
}

/// Ball families: Lagrangian relaxation of `Σṽᵢ²/uᵢ ≤ γ` with multiplier
/// `η`, searched by safeguarded regula falsi on `log η`.
fn solve_ball(
    op: &Operator,
    gamma: f64,
    budget: Budget,
    u0: DVector<f64>,
    beta0: DVector<f64>,
    opts: &SolverOptions,
) -> Result<BallResult> {
    let inner_tol = 0.1 * opts.tol_obj;
    let mut sweeps = 0usize;
    let ball_primal = |e: &Eval| -> f64 {
        let mut t = e.f_val;
        if let Budget::Lambda(lambda) = budget {
            t += lambda * e.u.sum();
        }
        t
    };

    // Initial multiplier from the dual at the origin.
    let start = op.evaluate(u0.clone(), DVector::zeros(beta0.len()))?;
    let a_sq: Vec<f64> = start.a.iter().map(|v| v * v).collect();
    let eta0 = match budget {
        Budget::Cardinality(k) => (sum_top_k(&a_sq, k)? / gamma).sqrt(),
        Budget::Lambda(lambda) => ball_penalized_eta(&a_sq, gamma, lambda).0,
    };
    if eta0 <= 0.0 || !eta0.is_finite() {
        // ∇f(0) is orthogonal to the range of X: ṽ = 0 is optimal.
        let e = op.evaluate(DVector::zeros(u0.len()), DVector::zeros(beta0.len()))?;
        return Ok(BallResult {
            eval: e,
            eta: 0.0,
            sweeps: 0,
            converged: true,
        });
    }
    let eta_floor = eta0 * 1e-12;

    let run = |eta: f64, warm: &Eval, sweeps: &mut usize| -> Result<Probe> {
        let budget_left = opts.max_sweeps.saturating_sub(*sweeps).max(1);
        let inner = solve_penalty(
            op,
            eta,
            budget,
            warm.u.clone(),
            warm.beta.clone(),
            inner_tol,
            budget_left,
        )?;
        *sweeps += inner.sweeps + 1;
        Ok(Probe {
            log_eta: eta.ln(),
            inner,
        })
    };

    let accept = |p: &Probe| -> Result<bool> {
        let e = &p.inner.eval;
        if e.quad > gamma * (1.0 + 1e-9) {
            return Ok(false);
        }
        let t = ball_primal(e);
        Ok(t - op.ball_dual(e, gamma, budget)? <= opts.tol_obj * (1.0 + t.abs()))
    };

    let first = run(eta0, &start, &mut sweeps)?;
    let (mut lo, mut hi): (Option<Probe>, Option<Probe>) = if first.excess(gamma) > 0.0 {
        (Some(first), None)
    } else {
        (None, Some(first))
    };

    // Bracket the root of S(η) = γ.
    let mut inactive = false;
    loop {
        if sweeps >= opts.max_sweeps {
            break;
        }
        match (&lo, &hi) {
            (Some(l), None) => {
                let eta = (l.log_eta + 8f64.ln()).exp();
                let p = run(eta, &l.inner.eval, &mut sweeps)?;
                if p.excess(gamma) > 0.0 {
                    lo = Some(p);
                } else {
                    hi = Some(p);
                }
            }
            (None, Some(h)) => {
                if accept(h)? {
                    break;
                }
                let eta = (h.log_eta - 8f64.ln()).exp();
                if eta < eta_floor {
                    inactive = true;
                    break;
                }
                let p = run(eta, &h.inner.eval, &mut sweeps)?;
                if p.excess(gamma) > 0.0 {
                    lo = Some(p);
                } else {
                    hi = Some(p);
                }
            }
            _ => break,
        }
    }

    // Illinois regula falsi on g(log η) = log S − log γ.
    let g = |p: &Probe| -> f64 { (p.inner.eval.quad.max(f64::MIN_POSITIVE) / gamma).ln() };
    let mut side = 0i32;
    let mut weight_lo = 1.0;
    let mut weight_hi = 1.0;
    if let (Some(_), Some(_)) = (&lo, &hi) {
        for _ in 0..200 {
            let (l, h) = (lo.as_ref().unwrap(), hi.as_ref().unwrap());
            if accept(h)? || sweeps >= opts.max_sweeps || h.log_eta - l.log_eta < 1e-13 {
                break;
            }
            let gl = g(l) * weight_lo;
            let gh = g(h) * weight_hi;
            let mut x = if gl.is_finite() && gh.is_finite() && gl > gh {
                l.log_eta + (h.log_eta - l.log_eta) * gl / (gl - gh)
            } else {
                0.5 * (l.log_eta + h.log_eta)
            };
            let width = h.log_eta - l.log_eta;
            if !(x > l.log_eta + 1e-3 * width && x < h.log_eta - 1e-3 * width) {
                x = 0.5 * (l.log_eta + h.log_eta);
            }
            let warm = if x - l.log_eta < h.log_eta - x {
                &l.inner.eval
            } else {
                &h.inner.eval
            };
            let p = run(x.exp(), &warm.clone(), &mut sweeps)?;
            if p.excess(gamma) > 0.0 {
                lo = Some(p);
                weight_lo = 1.0;
                if side == -1 {
                    weight_hi *= 0.5;
                }
                side = -1;
            } else {
                hi = Some(p);
                weight_hi = 1.0;
                if side == 1 {
                    weight_lo *= 0.5;
                }
                side = 1;
            }
        }
    }

    let Some(h) = hi else {
        // No feasible multiplier found within the sweep budget: report the
        // most constrained probe, scaled into the ball.
        let l = lo.expect("at least one probe exists");
        let e = scale_into_ball(op, l.inner.eval, gamma)?;
        return Ok(BallResult {
            eval: e,
            eta: l.log_eta.exp(),
            sweeps,
            converged: false,
        });
    };
    let mut chosen = h.inner.eval.clone();
    let eta = h.log_eta.exp();
    if let Some(l) = lo.as_ref() {
        if !inactive {
            let mix = mix_to_boundary(op, &l.inner.eval, &h.inner.eval, gamma)?;
            if mix.quad <= gamma * (1.0 + 1e-9) && ball_primal(&mix) < ball_primal(&chosen) {
                chosen = mix;
            }
        }
    }
    let t = ball_primal(&chosen);
    let converged = t - op.ball_dual(&chosen, gamma, budget)? <= opts.tol_obj * (1.0 + t.abs());
    Ok(BallResult {
        eval: chosen,
        eta,
        sweeps,
        converged,
    })
}

/// Convex combination of an infeasible and a feasible point landing on the
/// sphere `Σṽ²/u = γ` (or inside it, by joint convexity).
fn mix_to_boundary(op: &Operator, lo: &Eval, hi: &Eval, gamma: f64) -> Result<Eval> {
    let (s_lo, s_hi) = (lo.quad, hi.quad);
    let theta = if s_lo > s_hi {
        ((gamma - s_hi) / (s_lo - s_hi)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let u = &lo.u * theta + &hi.u * (1.0 - theta);
    let vt = &lo.v_tilde * theta + &hi.v_tilde * (1.0 - theta);
    eval_from_vtilde(op, u, vt)
}

fn scale_into_ball(op: &Operator, e: Eval, gamma: f64) -> Result<Eval> {
    if e.quad <= gamma {
        return Ok(e);
    }
    let s = (gamma / e.quad).sqrt();
    let vt = &e.v_tilde * s;
    eval_from_vtilde(op, e.u, vt)
}

/// Build an [`Eval`] for an arbitrary `(u, ṽ)` pair, not necessarily a
/// `v`-block optimum.
fn eval_from_vtilde(op: &Operator, u: DVector<f64>, v_tilde: DVector<f64>) -> Result<Eval> {
    let b = DVector::from_iterator(
        u.len(),
        u.iter()
            .zip(v_tilde.iter())
            .map(|(&ui, &vi)| if ui > 0.0 { vi / ui } else { 0.0 }),
    );
    let v_tilde = u.component_mul(&b);
    let z_star = op.ell * &v_tilde;
    let fit = op.u * &z_star;
    let f_val = loss_value(op.loss, fit.as_slice(), op.y)?;
    let grad = loss_gradient(op.loss, fit.as_slice(), op.y)?;
    let a = op.ell.tr_mul(&op.u.tr_mul(&grad));
    let quad = u.iter().zip(b.iter()).map(|(ui, bi)| ui * bi * bi).sum();
    let beta = DVector::zeros(op.ell.nrows());
    Ok(Eval {
        u,
        beta,
        b,
        v_tilde,
        f_val,
        grad,
        a,
        quad,
    })
}

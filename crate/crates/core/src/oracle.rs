//! Exact solutions by support enumeration, for small instances.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    loss_gradient, loss_value, primal_objective, Loss, ProblemInstance, RidgeKind, SparsityBudget,
};

pub const DEFAULT_CAP: u128 = 2_000_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: f64,
    pub w: Vec<f64>,
    pub support: Vec<usize>,
    pub subproblems_solved: usize,
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Number of supports [`exact_solve`] would enumerate.
pub fn enumeration_count(inst: &ProblemInstance) -> u128 {
    let m = inst.m();
    match inst.budget {
        SparsityBudget::Constrained(k) => (0..=k.min(m)).map(|j| binomial(m, j)).sum(),
        SparsityBudget::Penalized(_) => {
            if m >= 127 {
                u128::MAX
            } else {
                1u128 << m
            }
        }
    }
}

/// All `j`-subsets of `0..m` in lexicographic order.
fn combinations(m: usize, j: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if j > m {
        return out;
    }
    let mut idx: Vec<usize> = (0..j).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..j).rev().find(|&i| idx[i] < m - j + i) else {
            return out;
        };
        idx[i] += 1;
        for t in i + 1..j {
            idx[t] = idx[t - 1] + 1;
        }
    }
}

/// Global optimum of the instance's nonconvex problem by support enumeration.
pub fn exact_solve(inst: &ProblemInstance, cap: u128) -> Result<OracleResult> {
    inst.validate()?;
    let count = enumeration_count(inst);
    if count > cap {
        return Err(Error::EnumerationTooLarge { count, cap });
    }
    let m = inst.m();
    let max_size = match inst.budget {
        SparsityBudget::Constrained(k) => k.min(m),
        SparsityBudget::Penalized(_) => m,
    };
    let supports: Vec<Vec<usize>> = (0..=max_size).flat_map(|j| combinations(m, j)).collect();
    let results: Vec<Result<(f64, Vec<f64>, usize)>> = supports
        .par_iter()
        .enumerate()
        .map(|(idx, s)| {
            let (ws, _) = restricted_minimize(inst, s)?;
            let mut w = vec![0.0; m];
            for (&i, &v) in s.iter().zip(ws.iter()) {
                w[i] = v;
            }
            let value = primal_objective(inst, &w)?.value;
            Ok((value, w, idx))
        })
        .collect();
    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    for r in results {
        let r = r?;
        let better = match &best {
            None => true,
            Some(b) => r.0 < b.0 || (r.0 == b.0 && r.2 < b.2),
        };
        if better {
            best = Some(r);
        }
    }
    let (value, w, idx) = best.expect("the empty support is always enumerated");
    Ok(OracleResult {
        value,
        w,
        support: supports[idx].clone(),
        subproblems_solved: supports.len(),
    })
}

/// Minimize the family objective with `w` restricted to `support`. Returns
/// the restricted coefficients (in support order) and the objective value
/// (with `λ|support|` for penalized families).
pub fn restricted_minimize(inst: &ProblemInstance, support: &[usize]) -> Result<(Vec<f64>, f64)> {
    let m = inst.m();
    if support.iter().any(|&i| i >= m) {
        return Err(Error::InvalidArgument(format!(
            "support index out of range for m = {m}"
        )));
    }
    let n = inst.n();
    let s = support.len();
    let xs = DMatrix::from_fn(n, s, |i, j| inst.x_matrix[(i, support[j])]);
    let ws = if s == 0 {
        DVector::zeros(0)
    } else {
        match inst.ridge.kind {
            RidgeKind::Penalty => ridge_solve(inst.loss, &xs, &inst.y, inst.ridge.gamma, None)?,
            RidgeKind::Ball => ball_solve(inst.loss, &xs, &inst.y, inst.ridge.gamma)?,
        }
    };
    let fit = &xs * &ws;
    let mut value = loss_value(inst.loss, fit.as_slice(), inst.y.as_slice())?;
    if inst.ridge.kind == RidgeKind::Penalty {
        value += 0.5 * inst.ridge.gamma * ws.norm_squared();
    }
    if let SparsityBudget::Penalized(lambda) = inst.budget {
        value += lambda * s as f64;
    }
    Ok((ws.iter().copied().collect(), value))
}

/// `argmin f(X_S w) + (μ/2)‖w‖²`, optionally warm-started.
fn ridge_solve(
    loss: Loss,
    xs: &DMatrix<f64>,
    y: &DVector<f64>,
    mu: f64,
    warm: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let n = xs.nrows() as f64;
    let s = xs.ncols();
    match loss {
        Loss::Quadratic => {
            let mut g = xs.tr_mul(xs) / n;
            for i in 0..s {
                g[(i, i)] += mu;
            }
            let rhs = xs.tr_mul(y) / n;
            g.cholesky()
                .map(|c| c.solve(&rhs))
                .ok_or_else(|| Error::Unsupported("ridge system is not positive definite".into()))
        }
        Loss::Logistic => logistic_ridge_newton(
            xs,
            y,
            mu,
            warm.cloned().unwrap_or_else(|| DVector::zeros(s)),
        ),
    }
}

fn logistic_ridge_newton(
    xs: &DMatrix<f64>,
    y: &DVector<f64>,
    mu: f64,
    mut w: DVector<f64>,
) -> Result<DVector<f64>> {
    const MAX_NEWTON: usize = 200;
    let n = xs.nrows();
    let s = xs.ncols();
    let objective = |w: &DVector<f64>| -> Result<f64> {
        let fit = xs * w;
        Ok(loss_value(Loss::Logistic, fit.as_slice(), y.as_slice())? + 0.5 * mu * w.norm_squared())
    };
    let mut val = objective(&w)?;
    for _ in 0..MAX_NEWTON {
        let fit = xs * &w;
        let grad = xs.tr_mul(&loss_gradient(
            Loss::Logistic,
            fit.as_slice(),
            y.as_slice(),
        )?) + &w * mu;
        if grad.amax() <= 1e-10 {
            return Ok(w);
        }
        let mut weighted = xs.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            let p = 1.0 / (1.0 + (-(y[i] * fit[i])).exp());
            row *= p * (1.0 - p) / n as f64;
        }
        let mut hess = xs.tr_mul(&weighted);
        for i in 0..s {
            hess[(i, i)] += mu;
        }
        let Some(chol) = hess.cholesky() else {
            return Err(Error::NewtonNoConvergence(0));
        };
        let dir = -chol.solve(&grad);
        let slope = grad.dot(&dir);
        // Inside the quadratic-convergence region the decrease is below
        // rounding of the objective, so Armijo cannot judge the step.
        if -slope <= 1e-12 * (1.0 + val.abs()) {
            w += dir;
            val = objective(&w)?;
            continue;
        }
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &w + &dir * t;
            let cv = objective(&cand)?;
            if cv <= val + 1e-4 * t * slope {
                w = cand;
                val = cv;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            // Line search stalls only once rounding dominates the decrease.
            if grad.amax() <= 1e-8 {
                return Ok(w);
            }
            return Err(Error::NewtonNoConvergence(MAX_NEWTON));
        }
    }
    Err(Error::NewtonNoConvergence(MAX_NEWTON))
}

/// `argmin f(X_S w)` over `‖w‖² ≤ γ` by bisection on the multiplier.
fn ball_solve(loss: Loss, xs: &DMatrix<f64>, y: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
    match loss {
        Loss::Quadratic => Ok(quadratic_ball(xs, y, gamma)),
        Loss::Logistic => {
            // Bracket in log μ. A Newton failure at small μ means the
            // unregularized minimizer escapes to infinity, i.e. lies outside.
            let (mut lo, mut hi) = (f64::NEG_INFINITY, 0.0f64);
            let mut w_hi = ridge_solve(loss, xs, y, 1.0, None)?;
            while w_hi.norm_squared() > gamma {
                lo = hi;
                hi += 3.0;
                w_hi = ridge_solve(loss, xs, y, hi.exp(), Some(&w_hi))?;
            }
            while lo == f64::NEG_INFINITY {
                let cand = hi - 3.0;
                if cand < (1e-12f64).ln() {
                    return Ok(w_hi);
                }
                match ridge_solve(loss, xs, y, cand.exp(), Some(&w_hi)) {
                    Ok(w) if w.norm_squared() <= gamma => {
                        hi = cand;
                        w_hi = w;
                    }
                    _ => lo = cand,
                }
            }
            for _ in 0..200 {
                if hi - lo < 1e-12 {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let w = ridge_solve(loss, xs, y, mid.exp(), Some(&w_hi))?;
                let sq = w.norm_squared();
                if sq > gamma {
                    lo = mid;
                } else {
                    hi = mid;
                    w_hi = w;
                    if hi.exp() * (gamma - sq) <= 1e-10 {
                        break;
                    }
                }
            }
            Ok(w_hi)
        }
    }
}

/// Quadratic loss over the ball via the eigendecomposition of `X_SᵀX_S/n`;
/// the multiplier solves `Σ cⱼ²/(λⱼ+μ)² = γ`.
fn quadratic_ball(xs: &DMatrix<f64>, y: &DVector<f64>, gamma: f64) -> DVector<f64> {
    let n = xs.nrows() as f64;
    let g = xs.tr_mul(xs) / n;
    let eig = g.symmetric_eigen();
    let c = eig.eigenvectors.tr_mul(&(xs.tr_mul(y) / n));
    let lmax = eig.eigenvalues.amax();
    let null = |l: f64| l <= 1e-12 * lmax.max(f64::MIN_POSITIVE);
    let sq_norm = |mu: f64| -> f64 {
        eig.eigenvalues
            .iter()
            .zip(c.iter())
            .filter(|(l, _)| mu > 0.0 || !null(**l))
            .map(|(l, cj)| cj * cj / ((l.max(0.0) + mu) * (l.max(0.0) + mu)))
            .sum()
    };
    let coeffs = |mu: f64| -> DVector<f64> {
        DVector::from_iterator(
            c.len(),
            eig.eigenvalues.iter().zip(c.iter()).map(|(l, cj)| {
                if mu == 0.0 && null(*l) {
                    0.0
                } else {
                    cj / (l.max(0.0) + mu)
                }
            }),
        )
    };
    let mut mu = 0.0;
    if sq_norm(0.0) > gamma {
        // sq_norm is decreasing; bracket then bisect on log μ.
        let mut hi = lmax.max(1e-300);
        while sq_norm(hi) > gamma {
            hi *= 4.0;
        }
        let mut lo = hi * 1e-30;
        while sq_norm(lo) <= gamma && lo > 1e-300 {
            lo *= 1e-10;
        }
        let (mut llo, mut lhi) = (lo.ln(), hi.ln());
        for _ in 0..300 {
            let mid = 0.5 * (llo + lhi);
            if sq_norm(mid.exp()) > gamma {
                llo = mid;
            } else {
                lhi = mid;
            }
            let m_hi = lhi.exp();
            if lhi - llo < 1e-15 || m_hi * (gamma - sq_norm(m_hi)) <= 1e-10 * 1e-6 {
                break;
            }
        }
        mu = lhi.exp();
    }
    &eig.eigenvectors * coeffs(mu)
}

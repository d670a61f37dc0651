//! Compact SVD, low-rank truncation, numerical rank and the synthetic data
//! generators used by the experiments.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration applied to the taller
//! orientation of the matrix. It needs no external LAPACK and keeps small
//! singular values accurate to working precision relative to `σ₁`, which the
//! exact-rank detection below relies on.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Singular values at or below this multiple of `σ₁` are treated as zero and
/// never kept in a factorization.
pub const ZERO_SINGULAR_RTOL: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// `n × r`, orthonormal columns.
    pub u_r: DMatrix<f64>,
    /// Nonincreasing, strictly positive.
    pub sigma_r: DVector<f64>,
    /// `m × r`, orthonormal columns.
    pub v_r: DMatrix<f64>,
    /// `X − U_r Σ_r V_rᵀ`.
    pub delta_x: DMatrix<f64>,
    /// `Σ_r V_rᵀ` (`r × m`); column `i` is `ℓᵢ`.
    pub ell: DMatrix<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.sigma_r.len()
    }

    pub fn n(&self) -> usize {
        self.u_r.nrows()
    }

    pub fn m(&self) -> usize {
        self.v_r.nrows()
    }

    /// `U_r Σ_r V_rᵀ`.
    pub fn low_rank(&self) -> DMatrix<f64> {
        &self.u_r * &self.ell
    }

    /// The leading `r ≤ rank()` triplets, with the residual taken against `x`,
    /// the matrix this factorization came from. Saves a fresh SVD per rank.
    pub fn leading(&self, x: &DMatrix<f64>, r: usize) -> Result<SvdFactors> {
        if r == 0 || r > self.rank() {
            return Err(Error::RankOutOfRange {
                rank: r,
                max: self.rank(),
            });
        }
        let u_r = self.u_r.columns(0, r).into_owned();
        let ell = self.ell.rows(0, r).into_owned();
        let delta_x = x - &u_r * &ell;
        Ok(SvdFactors {
            u_r,
            sigma_r: self.sigma_r.rows(0, r).into_owned(),
            v_r: self.v_r.columns(0, r).into_owned(),
            delta_x,
            ell,
        })
    }
}

/// Full thin SVD `A = U diag(σ) Vᵀ` with `σ` sorted nonincreasing; `U` is
/// `n × p`, `V` is `m × p`, `p = min(n, m)`. Columns belonging to zero
/// singular values are left as computed (not necessarily orthonormal).
pub(crate) fn thin_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    if a.nrows() >= a.ncols() {
        jacobi_tall(a)
    } else {
        let (u, s, v) = jacobi_tall(&a.transpose());
        (v, s, u)
    }
}

fn jacobi_tall(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (n, m) = a.shape();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(m, m);
    let eps = f64::EPSILON;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..m {
            for q in (p + 1)..m {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                {
                    let cp = w.column(p);
                    let cq = w.column(q);
                    for i in 0..n {
                        alpha += cp[i] * cp[i];
                        beta += cq[i] * cq[i];
                        gamma += cp[i] * cq[i];
                    }
                }
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut w, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(usize, f64)> = (0..m).map(|j| (j, w.column(j).norm())).collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut u = DMatrix::zeros(n, m);
    let mut vs = DMatrix::zeros(m, m);
    let mut sig = DVector::zeros(m);
    for (dst, &(src, s)) in order.iter().enumerate() {
        sig[dst] = s;
        if s > 0.0 {
            u.set_column(dst, &(w.column(src) / s));
        }
        vs.set_column(dst, &v.column(src));
    }
    (u, sig, vs)
}

fn rotate_columns(mat: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let rows = mat.nrows();
    for i in 0..rows {
        let xp = mat[(i, p)];
        let xq = mat[(i, q)];
        mat[(i, p)] = c * xp - s * xq;
        mat[(i, q)] = s * xp + c * xq;
    }
}

pub fn singular_values(x: &DMatrix<f64>) -> DVector<f64> {
    thin_svd(x).1
}

fn check_finite(x: &DMatrix<f64>) -> Result<()> {
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            if !x[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Compact SVD keeping either the top `rank` triplets or every `σᵢ > tol·σ₁`.
/// Exactly one of `rank` and `tol` must be given.
pub fn compact_svd(x: &DMatrix<f64>, rank: Option<usize>, tol: Option<f64>) -> Result<SvdFactors> {
    check_finite(x)?;
    let (n, m) = x.shape();
    let p = n.min(m);
    let (u, s, v) = thin_svd(x);
    let sigma1 = if p > 0 { s[0] } else { 0.0 };
    let nonzero = s
        .iter()
        .filter(|&&si| si > ZERO_SINGULAR_RTOL * sigma1 && si > 0.0)
        .count();
    let keep = match (rank, tol) {
        (Some(r), None) => {
            if r == 0 || r > p {
                return Err(Error::RankOutOfRange { rank: r, max: p });
            }
            r.min(nonzero)
        }
        (None, Some(t)) => {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "tolerance must be nonnegative, got {t}"
                )));
            }
            s.iter()
                .take(nonzero)
                .filter(|&&si| si > t * sigma1)
                .count()
        }
        _ => {
            return Err(Error::InvalidArgument(
                "exactly one of rank and tol must be provided".into(),
            ))
        }
    };
    let u_r = u.columns(0, keep).into_owned();
    let v_r = v.columns(0, keep).into_owned();
    let sigma_r = DVector::from_iterator(keep, s.iter().take(keep).copied());
    let mut ell = v_r.transpose();
    for (i, mut row) in ell.row_iter_mut().enumerate() {
        row *= sigma_r[i];
    }
    let delta_x = x - &u_r * &ell;
    Ok(SvdFactors {
        u_r,
        sigma_r,
        v_r,
        delta_x,
        ell,
    })
}

/// Best rank-`rank` approximation `X_r`.
pub fn truncate(x: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    Ok(compact_svd(x, Some(rank), None)?.low_rank())
}

/// Smallest `r` with `σ_{r+1} ≤ τ σ₁`.
pub fn numerical_rank(x: &DMatrix<f64>, tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must lie in (0, 1), got {tau}"
        )));
    }
    check_finite(x)?;
    let s = singular_values(x);
    if s.is_empty() || s[0] == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&si| si > tau * s[0]).count())
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    // Filled row by row so the draw order matches the CSV layout.
    let data = rng.normal_vec(rows * cols);
    DMatrix::from_row_slice(rows, cols, &data)
}

/// I.i.d. standard normal `n × m` matrix truncated to exact rank `r`.
pub fn gen_lowrank(n: usize, m: usize, r: usize, seed: u64) -> Result<DMatrix<f64>> {
    let p = n.min(m);
    if r == 0 || r > p {
        return Err(Error::RankOutOfRange { rank: r, max: p });
    }
    let draw = gaussian_matrix(n, m, &mut SeededRng::new(seed));
    if r == p {
        return Ok(draw);
    }
    truncate(&draw, r)
}

/// Bell-shaped spectrum `σᵢ = exp(−(i/R)²)`, `i = 0, 1, …`, used by
/// [`gen_bell_lowrank`].
pub fn bell_spectrum(len: usize, effective_rank: usize) -> Vec<f64> {
    (0..len)
        .map(|i| (-(i as f64 / effective_rank as f64).powi(2)).exp())
        .collect()
}

fn orthonormal_columns(rows: usize, cols: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    let g = gaussian_matrix(rows, cols, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Sign-normalize so that the factor does not depend on Householder conventions.
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            let mut c = q.column_mut(j);
            c *= -1.0;
        }
    }
    q
}

/// Random orthonormal factors with the bell-shaped singular profile.
pub fn gen_bell_lowrank(
    n: usize,
    m: usize,
    effective_rank: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let p = n.min(m);
    if effective_rank == 0 || effective_rank > p {
        return Err(Error::RankOutOfRange {
            rank: effective_rank,
            max: p,
        });
    }
    let mut rng = SeededRng::new(seed);
    let u = orthonormal_columns(n, p, &mut rng);
    let v = orthonormal_columns(m, p, &mut rng);
    let sigma = bell_spectrum(p, effective_rank);
    let mut us = u;
    for (j, s) in sigma.iter().enumerate() {
        let mut c = us.column_mut(j);
        c *= *s;
    }
    Ok(us * v.transpose())
}

/// Sparse coefficient vector with `support_size` entries drawn `N(0, std²)`
/// at uniformly chosen positions.
pub fn gen_sparse_beta(m: usize, support_size: usize, std: f64, seed: u64) -> Result<DVector<f64>> {
    if support_size > m {
        return Err(Error::InvalidArgument(format!(
            "support size {support_size} exceeds dimension {m}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut idx: Vec<usize> = (0..m).collect();
    for i in 0..support_size {
        let j = i + rng.below(m - i);
        idx.swap(i, j);
    }
    let mut beta = DVector::zeros(m);
    for &i in &idx[..support_size] {
        beta[i] = std * rng.standard_normal();
    }
    Ok(beta)
}

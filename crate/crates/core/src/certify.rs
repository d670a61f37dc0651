//! Duality-gap certificates.
//!
//! For cardinality budgets the primalized point satisfies
//! `p_con(k+r+2) − ρ ≤ OPT ≤ p**(k) ≤ p_con(k)`; for penalized budgets
//! `p**(λ) − ρ ≤ p_pen(λ) − ρ ≤ OPT ≤ p**(λ) + λ(r+1)`. Ball-ridge families
//! additionally get bounds that pay `ζ = √γ‖ΔXᵀν‖` for replacing `X` by a
//! rank-`r` truncation, so that the rank in the bound can be the numerical
//! rank rather than the exact one.
//!
//! Quantities that are not computable exactly (the nonconvex optimum and its
//! multiplier) are replaced by the primalized value and the relaxation's
//! multiplier; each certificate lists those substitutions in `surrogates`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    cardinality, primal_objective, rho_bound, Family, ProblemInstance, RidgeKind, SparsityBudget,
};
use crate::primalize::{primalize, Primalization};
use crate::relax::{exact_factors, solve_bidual, RelaxedSolution, SolverOptions};
use crate::spectra::{compact_svd, SvdFactors};

/// Relative tolerance of every chain inequality: `lhs ≤ rhs + TOL·(1 + max(|lhs|, |rhs|))`.
pub const CHAIN_TOL: f64 = 1e-6;

/// Relative threshold below which singular values are treated as zero when
/// factoring the full matrix.
const FULL_RANK_RTOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs − rhs`; positive values beyond the tolerance are violations.
    pub residual: f64,
    /// Allowed residual: `CHAIN_TOL·(1 + max(|lhs|, |rhs|))` plus any LP slack.
    pub tol: f64,
    pub ok: bool,
}

impl ChainCheck {
    /// Record `lhs ≤ rhs` at the chain tolerance widened by `extra_tol`.
    pub fn new(name: &str, lhs: f64, rhs: f64, extra_tol: f64) -> Self {
        let tol = CHAIN_TOL * (1.0 + lhs.abs().max(rhs.abs())) + extra_tol;
        let residual = lhs - rhs;
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            residual,
            tol,
            ok: residual <= tol || (lhs == rhs),
        }
    }

    /// Re-derive the flag from the stored numbers.
    pub fn recheck(&self) -> bool {
        self.lhs - self.rhs <= self.tol || self.lhs == self.rhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCertificate {
    pub family: Family,
    /// `k` or `λ`.
    pub k_or_lambda: f64,
    /// Rank of the factorization behind the relaxation (`r` in the bounds).
    pub rank_used: usize,
    pub bidual_value: f64,
    pub dual_value: f64,
    pub opt_value: f64,
    pub opt_card: usize,
    /// Primalized weights achieving `opt_value`.
    pub w: Vec<f64>,
    /// Cardinality budgets: `p** − ρ`, a lower bound on `p_con(k)` up to `ρ`.
    /// Penalized budgets: `p** − ρ ≤ p_pen(λ) − ρ`.
    pub lower_bound: f64,
    /// Cardinality budgets: `p**`, which bounds `OPT` from above.
    /// Penalized budgets: `p** + λ(r+1)`.
    pub upper_bound: f64,
    pub rho: f64,
    pub zeta: f64,
    pub zeta_r: f64,
    pub chain: Vec<ChainCheck>,
    /// Equality slack the winning LP needed.
    pub slack_used: f64,
    pub converged: bool,
    /// Spread of `OPT` across the primalization trials.
    pub dispersion: f64,
    pub opt_std: f64,
    pub trials: usize,
    /// Quantities replaced by computable stand-ins.
    pub surrogates: Vec<String>,
}

impl GapCertificate {
    pub fn chain_ok(&self) -> bool {
        self.chain.iter().all(|c| c.ok)
    }

    pub fn violations(&self) -> impl Iterator<Item = &ChainCheck> {
        self.chain.iter().filter(|c| !c.ok)
    }

    /// `OPT − p**`.
    pub fn gap(&self) -> f64 {
        self.opt_value - self.bidual_value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub solver: SolverOptions,
    pub trials: usize,
    /// Declared lack of convexity for non-convex losses.
    pub user_rho: Option<f64>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            trials: 20,
            user_rho: None,
        }
    }
}

/// Relax, primalize and assemble the chain for the instance's family.
pub fn certify(
    inst: &ProblemInstance,
    svd: &SvdFactors,
    seed: u64,
    trials: usize,
) -> Result<GapCertificate> {
    certify_with(
        inst,
        svd,
        seed,
        &CertifyOptions {
            trials,
            ..CertifyOptions::default()
        },
    )
}

pub fn certify_with(
    inst: &ProblemInstance,
    svd: &SvdFactors,
    seed: u64,
    opts: &CertifyOptions,
) -> Result<GapCertificate> {
    inst.validate()?;
    let rho = rho_bound(inst.loss, opts.user_rho)?;
    let factors = exact_factors(inst, svd)?;
    let sol = solve_bidual(inst, &factors, &opts.solver)?;
    let prim = primalize(inst, &factors, &sol, seed, opts.trials)?;
    Ok(assemble(inst, &sol, &prim, rho, opts.trials))
}

fn assemble(
    inst: &ProblemInstance,
    sol: &RelaxedSolution,
    prim: &Primalization,
    rho: f64,
    trials: usize,
) -> GapCertificate {
    let r = sol.rank;
    let best = &prim.best;
    let p2 = sol.t_star;
    let slack = best.slack_used * (1.0 + p2.abs());
    let mut chain = vec![ChainCheck::new("dual <= bidual", sol.dual_value, p2, 0.0)];
    let (lower, upper) = match inst.budget {
        SparsityBudget::Constrained(k) => {
            chain.push(ChainCheck::new("OPT <= bidual", best.opt_value, p2, slack));
            chain.push(ChainCheck::new(
                "card <= k+r+2",
                best.card as f64,
                (k + r + 2).min(inst.m()) as f64,
                0.0,
            ));
            (p2 - rho, p2)
        }
        SparsityBudget::Penalized(lambda) => {
            let upper = p2 + lambda * (r as f64 + 1.0);
            chain.push(ChainCheck::new(
                "bidual - rho <= OPT",
                p2 - rho,
                best.opt_value,
                slack,
            ));
            chain.push(ChainCheck::new(
                "OPT <= bidual + lambda(r+1)",
                best.opt_value,
                upper,
                slack,
            ));
            (p2 - rho, upper)
        }
    };
    if inst.ridge.kind == RidgeKind::Ball {
        let sq: f64 = best.w.iter().map(|w| w * w).sum();
        chain.push(ChainCheck::new(
            "|w|^2 <= gamma",
            sq,
            inst.ridge.gamma * (1.0 + 1e-7),
            0.0,
        ));
    }
    chain.push(ChainCheck::new("lower <= upper", lower, upper, 0.0));
    let mut surrogates = Vec::new();
    if rho > 0.0 {
        surrogates.push("rho: user-declared lack of convexity".to_string());
    }
    GapCertificate {
        family: inst.family(),
        k_or_lambda: inst.budget.value(),
        rank_used: r,
        bidual_value: p2,
        dual_value: sol.dual_value,
        opt_value: best.opt_value,
        opt_card: best.card,
        w: best.w.clone(),
        lower_bound: lower,
        upper_bound: upper,
        rho,
        zeta: 0.0,
        zeta_r: 0.0,
        chain,
        slack_used: best.slack_used,
        converged: sol.converged,
        dispersion: prim.dispersion(),
        opt_std: prim.opt_std(),
        trials,
        surrogates,
    }
}

/// Certificate for the instance, optionally through its rank-`r`
/// approximation. Ball ridges get the bracket of [`full_rank_bounds`], which
/// pays for the truncation; penalty ridges are certified on `X_r` itself.
pub fn certify_at_rank(
    inst: &ProblemInstance,
    rank: Option<usize>,
    seed: u64,
    opts: &CertifyOptions,
) -> Result<GapCertificate> {
    match (rank, inst.ridge.kind) {
        (None, _) => {
            let svd = compact_svd(&inst.x_matrix, None, Some(FULL_RANK_RTOL))?;
            certify_with(inst, &svd, seed, opts)
        }
        (Some(r), RidgeKind::Ball) => FullRankReference::new(inst, seed, opts)?.bounds_at(r),
        (Some(r), RidgeKind::Penalty) => {
            let svd = compact_svd(&inst.x_matrix, Some(r), None)?;
            certify_with(&inst.with_x(svd.low_rank())?, &svd, seed, opts)
        }
    }
}

/// Relaxation and primalization at the full matrix `X`, shared by every
/// truncation rank of a sweep.
pub struct FullRankReference {
    inst: ProblemInstance,
    full: SvdFactors,
    sol_x: RelaxedSolution,
    prim_x: Primalization,
    rho: f64,
    seed: u64,
    opts: CertifyOptions,
}

/// The truncated side of a rank pair.
struct Truncation {
    inst_r: ProblemInstance,
    factors_r: SvdFactors,
    sol_r: RelaxedSolution,
    prim_r: Primalization,
    /// `X − X_r`; exactly zero once `rank_r` reaches the rank of `X`.
    delta_x: DMatrix<f64>,
}

fn require_ball(inst: &ProblemInstance) -> Result<()> {
    if inst.ridge.kind != RidgeKind::Ball {
        return Err(Error::Unsupported(
            "rank-perturbation bounds are stated for ball-ridge families only".into(),
        ));
    }
    Ok(())
}

impl FullRankReference {
    pub fn new(inst: &ProblemInstance, seed: u64, opts: &CertifyOptions) -> Result<Self> {
        inst.validate()?;
        require_ball(inst)?;
        let rho = rho_bound(inst.loss, opts.user_rho)?;
        let full = compact_svd(&inst.x_matrix, None, Some(FULL_RANK_RTOL))?;
        let sol_x = solve_bidual(inst, &full, &opts.solver)?;
        let prim_x = primalize(inst, &full, &sol_x, seed, opts.trials)?;
        Ok(Self {
            inst: inst.clone(),
            full,
            sol_x,
            prim_x,
            rho,
            seed,
            opts: opts.clone(),
        })
    }

    /// Rank of `X` at the working threshold.
    pub fn rank(&self) -> usize {
        self.full.rank()
    }

    pub fn relaxed(&self) -> &RelaxedSolution {
        &self.sol_x
    }

    pub fn primalized(&self) -> &Primalization {
        &self.prim_x
    }

    fn truncate(&self, rank_r: usize) -> Result<Truncation> {
        let inst = &self.inst;
        let p = inst.n().min(inst.m());
        if rank_r == 0 || rank_r > p {
            return Err(Error::RankOutOfRange {
                rank: rank_r,
                max: p,
            });
        }
        if rank_r >= self.full.rank() {
            return Ok(Truncation {
                inst_r: inst.clone(),
                factors_r: self.full.clone(),
                sol_r: self.sol_x.clone(),
                prim_r: self.prim_x.clone(),
                delta_x: DMatrix::zeros(inst.n(), inst.m()),
            });
        }
        let top = self.full.leading(&inst.x_matrix, rank_r)?;
        let delta_x = top.delta_x.clone();
        let factors_r = SvdFactors {
            delta_x: DMatrix::zeros(inst.n(), inst.m()),
            ..top
        };
        let inst_r = inst.with_x(factors_r.low_rank())?;
        let sol_r = solve_bidual(&inst_r, &factors_r, &self.opts.solver)?;
        let prim_r = primalize(&inst_r, &factors_r, &sol_r, self.seed, self.opts.trials)?;
        Ok(Truncation {
            inst_r,
            factors_r,
            sol_r,
            prim_r,
            delta_x,
        })
    }
}

fn zeta(gamma: f64, delta_x: &DMatrix<f64>, nu: &[f64]) -> f64 {
    gamma.sqrt() * delta_x.tr_mul(&DVector::from_column_slice(nu)).norm()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBounds {
    /// `p(X) − νᵀΔX w_r`.
    pub lo: f64,
    /// `p(X) − ν_rᵀΔX w`.
    pub hi: f64,
    /// Primalized value at `X`, standing in for `p(X)`.
    pub p_x: f64,
    /// Primalized value at `X_r`, standing in for `p(X_r)`.
    pub p_xr: f64,
    pub nu_delta_w_r: f64,
    pub nu_r_delta_w: f64,
    pub zeta: f64,
    pub zeta_r: f64,
    pub rank_used: usize,
    pub nu_norm: f64,
    pub nu_r_norm: f64,
    pub checks: Vec<ChainCheck>,
    pub surrogates: Vec<String>,
}

fn perturbation_surrogates() -> Vec<String> {
    vec![
        "p(X), p(X_r): best primalized values found at X and X_r".to_string(),
        "nu, nu_r: gradient multipliers of the relaxations".to_string(),
        "w, w_r: primalized points".to_string(),
    ]
}

/// Bracket of `p(X_r)` from the multiplier of `Xw = z`.
pub fn perturbation_bounds(
    inst: &ProblemInstance,
    rank_r: usize,
    seed: u64,
) -> Result<PerturbationBounds> {
    perturbation_bounds_with(inst, rank_r, seed, &CertifyOptions::default())
}

pub fn perturbation_bounds_with(
    inst: &ProblemInstance,
    rank_r: usize,
    seed: u64,
    opts: &CertifyOptions,
) -> Result<PerturbationBounds> {
    FullRankReference::new(inst, seed, opts)?.perturbation_at(rank_r)
}

impl FullRankReference {
    pub fn perturbation_at(&self, rank_r: usize) -> Result<PerturbationBounds> {
        let t = self.truncate(rank_r)?;
        let nu = DVector::from_column_slice(&self.sol_x.z_dual);
        let nu_r = DVector::from_column_slice(&t.sol_r.z_dual);
        let w = DVector::from_column_slice(&self.prim_x.best.w);
        let w_r = DVector::from_column_slice(&t.prim_r.best.w);
        let nu_delta_w_r = nu.dot(&(&t.delta_x * &w_r));
        let nu_r_delta_w = nu_r.dot(&(&t.delta_x * &w));
        let p_x = self.prim_x.best.opt_value;
        let p_xr = t.prim_r.best.opt_value;
        let lo = p_x - nu_delta_w_r;
        let hi = p_x - nu_r_delta_w;
        let checks = vec![
            ChainCheck::new("lo <= p(X_r)", lo, p_xr, 0.0),
            ChainCheck::new("p(X_r) <= hi", p_xr, hi, 0.0),
        ];
        let gamma = self.inst.ridge.gamma;
        Ok(PerturbationBounds {
            lo,
            hi,
            p_x,
            p_xr,
            nu_delta_w_r,
            nu_r_delta_w,
            zeta: zeta(gamma, &t.delta_x, nu.as_slice()),
            zeta_r: zeta(gamma, &t.delta_x, nu_r.as_slice()),
            rank_used: t.factors_r.rank(),
            nu_norm: nu.norm(),
            nu_r_norm: nu_r.norm(),
            checks,
            surrogates: perturbation_surrogates(),
        })
    }
}

impl FullRankReference {
    /// Smallest known objective at the full `X`: the primalized point there,
    /// or `w_r` whenever it is feasible for the full problem.
    fn best_value_at_x(&self, w_r: &[f64]) -> Result<f64> {
        let own = self.prim_x.best.opt_value;
        let at_x = primal_objective(&self.inst, w_r)?;
        let within_budget = match self.inst.budget {
            SparsityBudget::Constrained(k) => cardinality(w_r) <= k,
            SparsityBudget::Penalized(_) => true,
        };
        Ok(if at_x.ball_feasible && within_budget {
            own.min(at_x.value)
        } else {
            own
        })
    }
}

/// Gap certificate at the truncation `X_r`, paying `ζ + ζ_r` for the
/// truncation error.
pub fn full_rank_bounds(
    inst: &ProblemInstance,
    rank_r: usize,
    seed: u64,
    trials: usize,
) -> Result<GapCertificate> {
    full_rank_bounds_with(
        inst,
        rank_r,
        seed,
        &CertifyOptions {
            trials,
            ..CertifyOptions::default()
        },
    )
}

pub fn full_rank_bounds_with(
    inst: &ProblemInstance,
    rank_r: usize,
    seed: u64,
    opts: &CertifyOptions,
) -> Result<GapCertificate> {
    FullRankReference::new(inst, seed, opts)?.bounds_at(rank_r)
}

impl FullRankReference {
    pub fn bounds_at(&self, rank_r: usize) -> Result<GapCertificate> {
        let inst = &self.inst;
        let opts = &self.opts;
        let pair = self.truncate(rank_r)?;
        let gamma = inst.ridge.gamma;
        let z = zeta(gamma, &pair.delta_x, &self.sol_x.z_dual);
        let z_r = zeta(gamma, &pair.delta_x, &pair.sol_r.z_dual);
        let mut cert = assemble(
            &pair.inst_r,
            &pair.sol_r,
            &pair.prim_r,
            self.rho,
            opts.trials,
        );
        let r = cert.rank_used;
        let p_x = self.best_value_at_x(&pair.prim_r.best.w)?;
        let opt = cert.opt_value;
        let p2 = cert.bidual_value;
        let slack = cert.slack_used * (1.0 + p2.abs());
        let mut chain = vec![ChainCheck::new("dual <= bidual", cert.dual_value, p2, 0.0)];
        match inst.budget {
            SparsityBudget::Constrained(k) => {
                let wide_k = (k + r + 2).min(inst.m());
                let wide = if wide_k == k {
                    pair.sol_r.t_star
                } else {
                    let inst_wide = pair
                        .inst_r
                        .with_budget(SparsityBudget::Constrained(wide_k))?;
                    solve_bidual(&inst_wide, &pair.factors_r, &opts.solver)?.t_star
                };
                cert.lower_bound = wide - z_r - z;
                cert.upper_bound = p2;
                chain.push(ChainCheck::new(
                    "lower <= OPT",
                    cert.lower_bound,
                    opt,
                    slack,
                ));
                chain.push(ChainCheck::new("OPT <= p(X) - zeta", opt, p_x - z, slack));
                chain.push(ChainCheck::new(
                    "p(X) - zeta <= bidual(X_r)",
                    p_x - z,
                    p2,
                    0.0,
                ));
                chain.push(ChainCheck::new(
                    "card <= k+r+2",
                    cert.opt_card as f64,
                    wide_k as f64,
                    0.0,
                ));
            }
            SparsityBudget::Penalized(lambda) => {
                cert.lower_bound = p2 - z_r - z;
                cert.upper_bound = p2 + lambda * (r as f64 + 1.0);
                chain.push(ChainCheck::new(
                    "lower <= p(X) - zeta",
                    cert.lower_bound,
                    p_x - z,
                    0.0,
                ));
                chain.push(ChainCheck::new("p(X) - zeta <= OPT", p_x - z, opt, slack));
                chain.push(ChainCheck::new(
                    "OPT <= bidual(X_r) + lambda(r+1)",
                    opt,
                    cert.upper_bound,
                    slack,
                ));
            }
        }
        let sq: f64 = pair.prim_r.best.w.iter().map(|w| w * w).sum();
        chain.push(ChainCheck::new(
            "|w|^2 <= gamma",
            sq,
            gamma * (1.0 + 1e-7),
            0.0,
        ));
        chain.push(ChainCheck::new(
            "lower <= upper",
            cert.lower_bound,
            cert.upper_bound,
            0.0,
        ));
        cert.chain = chain;
        cert.zeta = z;
        cert.zeta_r = z_r;
        cert.surrogates.extend(perturbation_surrogates());
        Ok(cert)
    }
}

//! Shapley–Folkman primalization: recover a sparse feasible point from a
//! relaxed solution.
//!
//! Fixing the relaxed magnitudes `v*`, every constraint of the relaxation and
//! the compressed point `z* = Σᵢ uᵢ vᵢ* ℓᵢ` are linear in `u`. A vertex of the
//! resulting polytope has at most as many fractional entries as there are
//! rows (`r + 2` or fewer), and rounding it as `w = ū∘v*` keeps `Xw = U_r z*`
//! while never increasing the ridge term.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{lp_feasible_with_slack, lp_solve, LpProblem, LpStatus, BOUND_TOL};
use crate::model::{
    cardinality, loss_value, primal_objective, Family, ProblemInstance, SparsityBudget,
};
use crate::relax::{exact_factors, RelaxedSolution};
use crate::rng::SeededRng;
use crate::spectra::SvdFactors;

/// Equality slacks tried in turn, relative to each row's max-abs entry.
pub const SLACK_LADDER: [f64; 4] = [0.0, 1e-9, 1e-7, 1e-5];

/// Entries within this distance of 0 or 1 count as binary.
pub const FRACTIONAL_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalPoint {
    pub w: Vec<f64>,
    /// Binary selector: one on the fractional set and on rounded-up entries.
    pub u_tilde: Vec<f64>,
    pub v_tilde: Vec<f64>,
    /// Indices with `wᵢ ≠ 0`.
    pub support: Vec<usize>,
    /// Fractional set `S` of the LP vertex.
    pub fractional: Vec<usize>,
    /// Primal objective at `w`, with `λ‖w‖₀` for penalized families.
    pub opt_value: f64,
    pub card: usize,
    /// `‖w‖² ≤ γ(1+1e-9)`; always true for penalty ridges.
    pub ball_feasible: bool,
    /// LP vertex `ū` the point was rounded from.
    pub u_bar: Vec<f64>,
    pub trial: usize,
    pub slack_used: f64,
    /// Entries of `ū` strictly inside `(0, 1)`.
    pub nonbound_count: usize,
    /// Constraint rows of the LP besides the bounds.
    pub lp_rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Primalization {
    pub best: PrimalPoint,
    pub all: Vec<PrimalPoint>,
}

impl Primalization {
    /// Spread `max − min` of the trial objectives.
    pub fn dispersion(&self) -> f64 {
        let (lo, hi) = self
            .all
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.opt_value), hi.max(p.opt_value))
            });
        hi - lo
    }

    /// Population standard deviation of the trial objectives.
    pub fn opt_std(&self) -> f64 {
        let n = self.all.len() as f64;
        let mean = self.all.iter().map(|p| p.opt_value).sum::<f64>() / n;
        let var = self
            .all
            .iter()
            .map(|p| (p.opt_value - mean).powi(2))
            .sum::<f64>()
            / n;
        var.sqrt()
    }
}

/// Number of constraint rows in the LP of `family` at rank `r`.
pub fn sf_row_count(family: Family, r: usize) -> usize {
    match family {
        Family::ConstrainedPenalty | Family::ConstrainedBall | Family::PenalizedBall => r + 2,
        Family::PenalizedPenalty => r + 1,
    }
}

/// The LP over `u ∈ [0,1]^m` whose feasible set contains the relaxed `u*`.
///
/// `factors` must be the factorization `sol` was computed on (`sol.rank`
/// columns of `ℓ`).
pub fn build_sf_lp(
    inst: &ProblemInstance,
    factors: &SvdFactors,
    sol: &RelaxedSolution,
    c: &[f64],
) -> Result<LpProblem> {
    let m = inst.m();
    let r = factors.rank();
    if c.len() != m || sol.v.len() != m || factors.m() != m || factors.n() != inst.n() {
        return Err(Error::DimensionMismatch(format!(
            "LP over {m} variables needs matching objective, magnitudes and factors"
        )));
    }
    if sol.z_star.len() != r {
        return Err(Error::DimensionMismatch(format!(
            "z* has length {} but the factors have rank {r}",
            sol.z_star.len()
        )));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("LP objective must be finite".into()));
    }
    let v = &sol.v;
    let gamma = inst.ridge.gamma;
    let family = inst.family();
    let mut prob = LpProblem::unit_box(c.to_vec());

    // Objective row: t* minus the loss term, which is fixed by z*.
    let lambda = match inst.budget {
        SparsityBudget::Penalized(l) => l,
        SparsityBudget::Constrained(_) => 0.0,
    };
    let fixed_loss = || -> Result<f64> {
        let fit = &factors.u_r * DVector::from_column_slice(&sol.z_star);
        loss_value(inst.loss, fit.as_slice(), inst.y.as_slice())
    };
    match family {
        Family::ConstrainedPenalty | Family::PenalizedPenalty => {
            let row: Vec<f64> = v.iter().map(|vi| 0.5 * gamma * vi * vi + lambda).collect();
            prob.add_eq(&row, sol.t_star - fixed_loss()?);
        }
        Family::PenalizedBall => {
            prob.add_eq(&vec![lambda; m], sol.t_star - fixed_loss()?);
        }
        Family::ConstrainedBall => {}
    }
    if let SparsityBudget::Constrained(k) = inst.budget {
        prob.add_ineq(&vec![1.0; m], k as f64);
    }
    if family.is_ball() {
        let row: Vec<f64> = v.iter().map(|vi| vi * vi).collect();
        prob.add_ineq(&row, gamma);
    }
    for j in 0..r {
        let row: Vec<f64> = (0..m).map(|i| factors.ell[(j, i)] * v[i]).collect();
        prob.add_eq(&row, sol.z_star[j]);
    }
    Ok(prob)
}

/// Round an LP vertex: `wᵢ = ūᵢ vᵢ*` on the fractional set, `wᵢ = vᵢ*` where
/// `ūᵢ` rounds to one and zero where it rounds to zero.
pub fn sf_round(
    inst: &ProblemInstance,
    sol: &RelaxedSolution,
    u_bar: &[f64],
) -> Result<PrimalPoint> {
    let m = inst.m();
    if u_bar.len() != m || sol.v.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "selector of length {} for {m} features",
            u_bar.len()
        )));
    }
    let mut u_tilde = vec![0.0; m];
    let mut v_tilde = vec![0.0; m];
    let mut fractional = Vec::new();
    for i in 0..m {
        let ub = u_bar[i];
        if ub > FRACTIONAL_TOL && ub < 1.0 - FRACTIONAL_TOL {
            fractional.push(i);
            u_tilde[i] = 1.0;
            v_tilde[i] = ub * sol.v[i];
        } else {
            u_tilde[i] = if ub >= 0.5 { 1.0 } else { 0.0 };
            v_tilde[i] = sol.v[i];
        }
    }
    let w: Vec<f64> = u_tilde.iter().zip(&v_tilde).map(|(a, b)| a * b).collect();
    let support: Vec<usize> = (0..m).filter(|&i| w[i] != 0.0).collect();
    let obj = primal_objective(inst, &w)?;
    Ok(PrimalPoint {
        card: cardinality(&w),
        w,
        u_tilde,
        v_tilde,
        support,
        nonbound_count: fractional.len(),
        fractional,
        opt_value: obj.value,
        ball_feasible: obj.ball_feasible,
        u_bar: u_bar.to_vec(),
        trial: 0,
        slack_used: 0.0,
        lp_rows: 0,
    })
}

/// Solve one LP down the slack ladder; `None` if every rung is infeasible.
fn solve_trial(prob: &LpProblem) -> Result<Option<(Vec<f64>, f64)>> {
    for &slack in &SLACK_LADDER {
        let widened = lp_feasible_with_slack(prob, slack)?;
        let sol = lp_solve(&widened)?;
        if sol.status == LpStatus::Optimal {
            return Ok(Some((sol.u, slack)));
        }
    }
    Ok(None)
}

/// Run `trials` LPs with Gaussian objectives and keep the best rounded point.
///
/// Trial `t` draws its objective from stream `t` of `seed`, so the result does
/// not depend on scheduling. Ties go to the smaller cardinality, then the
/// lower trial index.
pub fn primalize(
    inst: &ProblemInstance,
    svd: &SvdFactors,
    sol: &RelaxedSolution,
    seed: u64,
    trials: usize,
) -> Result<Primalization> {
    if trials == 0 {
        return Err(Error::InvalidArgument(
            "at least one primalization trial is required".into(),
        ));
    }
    let factors = exact_factors(inst, svd)?;
    if factors.rank() != sol.rank {
        return Err(Error::DimensionMismatch(format!(
            "relaxed solution was computed at rank {} but the factors have rank {}",
            sol.rank,
            factors.rank()
        )));
    }
    let m = inst.m();
    let results: Vec<Result<Option<PrimalPoint>>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let c = SeededRng::with_stream(seed, trial as u64).normal_vec(m);
            let prob = build_sf_lp(inst, &factors, sol, &c)?;
            let Some((u_bar, slack)) = solve_trial(&prob)? else {
                return Ok(None);
            };
            let mut point = sf_round(inst, sol, &u_bar)?;
            point.trial = trial;
            point.slack_used = slack;
            point.lp_rows = prob.num_rows();
            point.nonbound_count = u_bar
                .iter()
                .filter(|&&u| u > BOUND_TOL && u < 1.0 - BOUND_TOL)
                .count();
            Ok(Some(point))
        })
        .collect();
    let mut all = Vec::with_capacity(trials);
    for r in results {
        if let Some(p) = r? {
            all.push(p);
        }
    }
    let best = all
        .iter()
        .min_by(|a, b| {
            a.opt_value
                .total_cmp(&b.opt_value)
                .then(a.card.cmp(&b.card))
                .then(a.trial.cmp(&b.trial))
        })
        .cloned()
        .ok_or(Error::AllTrialsInfeasible(
            SLACK_LADDER[SLACK_LADDER.len() - 1],
        ))?;
    Ok(Primalization { best, all })
}

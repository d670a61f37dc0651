//! Problem instances, losses and primal objective evaluation.
//!
//! Losses use the normalizations `f(z) = ‖z − y‖² / (2n)` (quadratic) and
//! `f(z) = (1/n) Σ log(1 + exp(−yᵢ zᵢ))` (logistic). Every bound computed by
//! this crate inherits them.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Quadratic,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RidgeKind {
    /// `(γ/2)‖w‖²` added to the objective.
    Penalty,
    /// `‖w‖² ≤ γ` imposed as a constraint.
    Ball,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeForm {
    pub kind: RidgeKind,
    pub gamma: f64,
}

impl RidgeForm {
    pub fn penalty(gamma: f64) -> Self {
        Self {
            kind: RidgeKind::Penalty,
            gamma,
        }
    }

    pub fn ball(gamma: f64) -> Self {
        Self {
            kind: RidgeKind::Ball,
            gamma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SparsityBudget {
    /// `‖w‖₀ ≤ k`.
    Constrained(usize),
    /// `λ‖w‖₀` added to the objective.
    Penalized(f64),
}

impl SparsityBudget {
    pub fn value(&self) -> f64 {
        match *self {
            SparsityBudget::Constrained(k) => k as f64,
            SparsityBudget::Penalized(lambda) => lambda,
        }
    }
}

fn split_tag<'a>(s: &'a str, what: &str) -> Result<(&'a str, &'a str)> {
    s.split_once(':')
        .map(|(a, b)| (a.trim(), b.trim()))
        .ok_or_else(|| Error::InvalidArgument(format!("expected {what}, got {s:?}")))
}

pub(crate) fn positive_real(text: &str) -> Result<f64> {
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(Error::InvalidArgument(format!(
            "expected a positive number, got {text:?}"
        ))),
    }
}

/// `penalty:G` or `ball:G`.
impl FromStr for RidgeForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = split_tag(s, "penalty:G or ball:G")?;
        let gamma = positive_real(value)?;
        match kind {
            "penalty" => Ok(RidgeForm::penalty(gamma)),
            "ball" => Ok(RidgeForm::ball(gamma)),
            _ => Err(Error::InvalidArgument(format!(
                "unknown ridge kind {kind:?}; use penalty or ball"
            ))),
        }
    }
}

impl fmt::Display for RidgeForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            RidgeKind::Penalty => write!(f, "penalty:{}", self.gamma),
            RidgeKind::Ball => write!(f, "ball:{}", self.gamma),
        }
    }
}

/// `k:K` or `lambda:L`.
impl FromStr for SparsityBudget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = split_tag(s, "k:K or lambda:L")?;
        match kind {
            "k" => value
                .parse::<usize>()
                .map(SparsityBudget::Constrained)
                .map_err(|_| {
                    Error::InvalidArgument(format!("expected an integer k, got {value:?}"))
                }),
            "lambda" => positive_real(value).map(SparsityBudget::Penalized),
            _ => Err(Error::InvalidArgument(format!(
                "unknown budget kind {kind:?}; use k or lambda"
            ))),
        }
    }
}

impl fmt::Display for SparsityBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SparsityBudget::Constrained(k) => write!(f, "k:{k}"),
            SparsityBudget::Penalized(l) => write!(f, "lambda:{l}"),
        }
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(Loss::Quadratic),
            "logistic" => Ok(Loss::Logistic),
            _ => Err(Error::InvalidArgument(format!(
                "unknown loss {s:?}; use quadratic or logistic"
            ))),
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Loss::Quadratic => "quadratic",
            Loss::Logistic => "logistic",
        })
    }
}

/// The four problem families, one per (ridge kind, budget kind) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    ConstrainedPenalty,
    PenalizedPenalty,
    ConstrainedBall,
    PenalizedBall,
}

impl Family {
    pub fn is_penalized(self) -> bool {
        matches!(self, Family::PenalizedPenalty | Family::PenalizedBall)
    }

    pub fn is_ball(self) -> bool {
        matches!(self, Family::ConstrainedBall | Family::PenalizedBall)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::ConstrainedPenalty => "constrained-penalty",
            Family::PenalizedPenalty => "penalized-penalty",
            Family::ConstrainedBall => "constrained-ball",
            Family::PenalizedBall => "penalized-ball",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub x_matrix: DMatrix<f64>,
    pub y: DVector<f64>,
    pub loss: Loss,
    pub ridge: RidgeForm,
    pub budget: SparsityBudget,
}

impl ProblemInstance {
    pub fn new(
        x_matrix: DMatrix<f64>,
        y: DVector<f64>,
        loss: Loss,
        ridge: RidgeForm,
        budget: SparsityBudget,
    ) -> Result<Self> {
        let inst = Self {
            x_matrix,
            y,
            loss,
            ridge,
            budget,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = self.x_matrix.shape();
        if n == 0 || m == 0 {
            return Err(Error::InvalidInstance(format!(
                "empty design matrix {n}x{m}"
            )));
        }
        if self.y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "y has length {} but X has {n} rows",
                self.y.len()
            )));
        }
        for j in 0..m {
            for i in 0..n {
                if !self.x_matrix[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        for (i, &yi) in self.y.iter().enumerate() {
            if !yi.is_finite() {
                return Err(Error::NonFinite { row: i, col: 0 });
            }
        }
        if self.loss == Loss::Logistic {
            check_labels(self.y.as_slice())?;
        }
        if !(self.ridge.gamma > 0.0 && self.ridge.gamma.is_finite()) {
            return Err(Error::InvalidInstance(format!(
                "ridge gamma must be positive and finite, got {}",
                self.ridge.gamma
            )));
        }
        match self.budget {
            SparsityBudget::Constrained(k) if k > m => Err(Error::InvalidInstance(format!(
                "sparsity budget k = {k} exceeds m = {m}"
            ))),
            SparsityBudget::Penalized(l) if !(l > 0.0 && l.is_finite()) => Err(
                Error::InvalidInstance(format!("lambda must be positive, got {l}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn n(&self) -> usize {
        self.x_matrix.nrows()
    }

    pub fn m(&self) -> usize {
        self.x_matrix.ncols()
    }

    pub fn family(&self) -> Family {
        match (self.ridge.kind, self.budget) {
            (RidgeKind::Penalty, SparsityBudget::Constrained(_)) => Family::ConstrainedPenalty,
            (RidgeKind::Penalty, SparsityBudget::Penalized(_)) => Family::PenalizedPenalty,
            (RidgeKind::Ball, SparsityBudget::Constrained(_)) => Family::ConstrainedBall,
            (RidgeKind::Ball, SparsityBudget::Penalized(_)) => Family::PenalizedBall,
        }
    }

    /// Same data and ridge with a different sparsity budget.
    pub fn with_budget(&self, budget: SparsityBudget) -> Result<Self> {
        Self::new(
            self.x_matrix.clone(),
            self.y.clone(),
            self.loss,
            self.ridge,
            budget,
        )
    }

    /// Same responses and parameters over a different design matrix.
    pub fn with_x(&self, x_matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(x_matrix, self.y.clone(), self.loss, self.ridge, self.budget)
    }
}

fn check_labels(y: &[f64]) -> Result<()> {
    for (index, &value) in y.iter().enumerate() {
        if value != 1.0 && value != -1.0 {
            return Err(Error::InvalidLabel { index, value });
        }
    }
    Ok(())
}

fn check_lengths(z: &[f64], y: &[f64]) -> Result<()> {
    if z.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "argument has length {} but y has length {}",
            z.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::DimensionMismatch("empty response vector".into()));
    }
    Ok(())
}

/// `log(1 + exp(t))` without overflow.
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Carrier for a loss value and its gradient.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    pub gradient: DVector<f64>,
}

pub fn loss_value(loss: Loss, z: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(z, y)?;
    let n = y.len() as f64;
    match loss {
        Loss::Quadratic => Ok(z
            .iter()
            .zip(y)
            .map(|(zi, yi)| (zi - yi) * (zi - yi))
            .sum::<f64>()
            / (2.0 * n)),
        Loss::Logistic => {
            check_labels(y)?;
            Ok(z.iter()
                .zip(y)
                .map(|(zi, yi)| softplus(-yi * zi))
                .sum::<f64>()
                / n)
        }
    }
}

pub fn loss_gradient(loss: Loss, z: &[f64], y: &[f64]) -> Result<DVector<f64>> {
    check_lengths(z, y)?;
    let n = y.len() as f64;
    match loss {
        Loss::Quadratic => Ok(DVector::from_iterator(
            z.len(),
            z.iter().zip(y).map(|(zi, yi)| (zi - yi) / n),
        )),
        Loss::Logistic => {
            check_labels(y)?;
            Ok(DVector::from_iterator(
                z.len(),
                z.iter().zip(y).map(|(zi, yi)| -yi * sigmoid(-yi * zi) / n),
            ))
        }
    }
}

pub fn loss_eval(loss: Loss, z: &[f64], y: &[f64]) -> Result<LossEval> {
    Ok(LossEval {
        value: loss_value(loss, z, y)?,
        gradient: loss_gradient(loss, z, y)?,
    })
}

/// Fenchel conjugate `f*(s) = sup_z sᵀz − f(z)`; `+∞` outside the domain.
pub fn loss_conjugate(loss: Loss, s: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(s, y)?;
    let n = y.len() as f64;
    match loss {
        Loss::Quadratic => {
            let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
            let ss: f64 = s.iter().map(|a| a * a).sum();
            Ok(sy + 0.5 * n * ss)
        }
        Loss::Logistic => {
            let mut total = 0.0;
            for (si, yi) in s.iter().zip(y) {
                let sigma = n * si * yi;
                if !(-1.0..=0.0).contains(&sigma) {
                    return Ok(f64::INFINITY);
                }
                total += xlogx(-sigma) + xlogx(1.0 + sigma);
            }
            Ok(total / n)
        }
    }
}

/// Objective value of a candidate `w`. For ball ridges the `γ` term is absent
/// and feasibility is reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub value: f64,
    pub ball_feasible: bool,
}

pub fn cardinality(w: &[f64]) -> usize {
    w.iter().filter(|&&wi| wi != 0.0).count()
}

pub fn primal_objective(inst: &ProblemInstance, w: &[f64]) -> Result<ObjectiveValue> {
    if w.len() != inst.m() {
        return Err(Error::DimensionMismatch(format!(
            "w has length {} but X has {} columns",
            w.len(),
            inst.m()
        )));
    }
    let xw = &inst.x_matrix * DVector::from_column_slice(w);
    let mut value = loss_value(inst.loss, xw.as_slice(), inst.y.as_slice())?;
    let sq: f64 = w.iter().map(|a| a * a).sum();
    let gamma = inst.ridge.gamma;
    let ball_feasible = match inst.ridge.kind {
        RidgeKind::Penalty => {
            value += 0.5 * gamma * sq;
            true
        }
        RidgeKind::Ball => sq <= gamma * (1.0 + 1e-9),
    };
    if let SparsityBudget::Penalized(lambda) = inst.budget {
        value += lambda * cardinality(w) as f64;
    }
    Ok(ObjectiveValue {
        value,
        ball_feasible,
    })
}

/// Lack of convexity `sup f − f**`: zero for the built-in losses, or the
/// value declared by a caller that plugs in a non-convex loss.
pub fn rho_bound(_loss: Loss, user_rho: Option<f64>) -> Result<f64> {
    match user_rho {
        None => Ok(0.0),
        Some(r) if r >= 0.0 && r.is_finite() => Ok(r),
        Some(r) => Err(Error::InvalidArgument(format!(
            "rho must be nonnegative, got {r}"
        ))),
    }
}

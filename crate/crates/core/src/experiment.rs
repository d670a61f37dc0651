//! Synthetic data generation, named experiment presets and concurrent sweeps.
//!
//! A sweep evaluates one certificate per grid point. Points run on a rayon
//! pool of the requested width, each with a seed derived from the run seed
//! and the point's grid index, so rows come out identical and in grid order
//! whatever the completion order.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{certify_with, CertifyOptions, FullRankReference, GapCertificate};
use crate::error::{Error, Result};
use crate::model::{positive_real, Loss, ProblemInstance, RidgeForm, SparsityBudget};
use crate::rng::{derive_seed, SeededRng};
use crate::spectra::{compact_svd, gen_bell_lowrank, gen_lowrank, gen_sparse_beta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spectrum {
    /// I.i.d. Gaussian entries truncated to exact rank.
    Gaussian,
    /// Random orthonormal factors with `σᵢ = exp(−(i/R)²)`.
    Bell,
}

/// Recipe for `y = Xβ + ε` (regression) or `y = sign(Xβ + ε)` (classification).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n: usize,
    pub m: usize,
    /// Exact rank (Gaussian) or effective rank `R` (bell).
    pub rank: usize,
    pub sparsity: usize,
    pub beta_std: f64,
    pub noise_std: f64,
    pub loss: Loss,
    pub spectrum: Spectrum,
    pub seed: u64,
}

impl GenSpec {
    /// 1000 × 100 samples of rank 10, ten coefficients `N(0, 25)`, unit noise.
    pub fn experiment1(loss: Loss, seed: u64) -> Self {
        Self {
            n: 1000,
            m: 100,
            rank: 10,
            sparsity: 10,
            beta_std: 5.0,
            noise_std: 1.0,
            loss,
            spectrum: Spectrum::Gaussian,
            seed,
        }
    }

    /// Parse `key=value` pairs separated by commas on top of
    /// [`GenSpec::experiment1`]. Keys: `n`, `m`, `rank`, `sparsity`, `std`,
    /// `noise`, `spectrum` (`gaussian` or `bell`).
    pub fn parse(text: &str, loss: Loss, seed: u64) -> Result<Self> {
        let mut spec = Self::experiment1(loss, seed);
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("generator field {part:?} is not key=value"))
            })?;
            let bad = |what: &str| {
                Error::InvalidArgument(format!("generator field {key}: {what} {value:?}"))
            };
            let int = || {
                value
                    .parse::<usize>()
                    .map_err(|_| bad("expected an integer, got"))
            };
            let real = || {
                value
                    .parse::<f64>()
                    .map_err(|_| bad("expected a number, got"))
            };
            match key {
                "n" => spec.n = int()?,
                "m" => spec.m = int()?,
                "rank" => spec.rank = int()?,
                "sparsity" => spec.sparsity = int()?,
                "std" => spec.beta_std = real()?,
                "noise" => spec.noise_std = real()?,
                "spectrum" => {
                    spec.spectrum = match value {
                        "gaussian" => Spectrum::Gaussian,
                        "bell" => Spectrum::Bell,
                        _ => return Err(bad("unknown spectrum")),
                    }
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown generator field {key:?}"
                    )))
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidArgument(format!(
                "generator shape {}x{} is empty",
                self.n, self.m
            )));
        }
        if !(self.beta_std >= 0.0 && self.beta_std.is_finite())
            || !(self.noise_std >= 0.0 && self.noise_std.is_finite())
        {
            return Err(Error::InvalidArgument(
                "generator standard deviations must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta: DVector<f64>,
}

/// Draw a dataset. `X` uses the seed itself, `β` and `ε` use derived
/// streams 1 and 2. Classification labels are `2·round(sigmoid(Xβ + ε)) − 1`,
/// that is `+1` exactly when `Xβ + ε ≥ 0`.
pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    spec.validate()?;
    let x = match spec.spectrum {
        Spectrum::Gaussian => gen_lowrank(spec.n, spec.m, spec.rank, spec.seed)?,
        Spectrum::Bell => gen_bell_lowrank(spec.n, spec.m, spec.rank, spec.seed)?,
    };
    let beta = gen_sparse_beta(
        spec.m,
        spec.sparsity,
        spec.beta_std,
        derive_seed(spec.seed, 1),
    )?;
    let noise = SeededRng::with_stream(spec.seed, 2).normal_vec(spec.n);
    let signal = &x * &beta;
    let y = DVector::from_iterator(
        spec.n,
        signal.iter().zip(&noise).map(|(s, e)| {
            let z = s + spec.noise_std * e;
            match spec.loss {
                Loss::Quadratic => z,
                Loss::Logistic if z >= 0.0 => 1.0,
                Loss::Logistic => -1.0,
            }
        }),
    );
    Ok(Dataset { x, y, beta })
}

/// Center every column and scale it to unit population variance. Constant
/// columns are only centered.
pub fn standardize_columns(x: &mut DMatrix<f64>) {
    let n = x.nrows() as f64;
    for mut col in x.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n).sqrt();
        if sd > 0.0 {
            col /= sd;
        }
    }
}

/// Accept labels coded `{0, 1}` or `{−1, 1}` and return them as `±1`.
pub fn binary_labels(y: &DVector<f64>) -> Result<DVector<f64>> {
    let zero_one = y.iter().all(|&v| v == 0.0 || v == 1.0);
    let signed = y.iter().all(|&v| v == -1.0 || v == 1.0);
    if zero_one && !signed {
        Ok(y.map(|v| 2.0 * v - 1.0))
    } else if signed {
        Ok(y.clone())
    } else {
        Err(Error::InvalidArgument(
            "classification labels must be coded {0,1} or {-1,1}".into(),
        ))
    }
}

/// The parameter axis of a sweep. Grids must be nonempty and strictly
/// increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "lowercase")]
pub enum SweepGrid {
    Lambda {
        values: Vec<f64>,
    },
    K {
        values: Vec<usize>,
    },
    /// Truncation ranks, repeated for each budget (the instance's own budget
    /// when empty). Requires a ball ridge.
    Rank {
        ranks: Vec<usize>,
        budgets: Vec<SparsityBudget>,
    },
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        match self {
            SweepGrid::Lambda { values } => values.len(),
            SweepGrid::K { values } => values.len(),
            SweepGrid::Rank { ranks, budgets } => ranks.len() * budgets.len().max(1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidArgument(format!("sweep grid: {msg}")));
        let sorted = match self {
            SweepGrid::Lambda { values } => {
                if values.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
                    return fail("lambda values must be positive and finite");
                }
                strictly_increasing(values)
            }
            SweepGrid::K { values } => strictly_increasing(values),
            SweepGrid::Rank { ranks, .. } => {
                if ranks.contains(&0) {
                    return fail("ranks start at 1");
                }
                strictly_increasing(ranks)
            }
        };
        if self.is_empty() {
            return fail("no grid points");
        }
        if !sorted {
            return fail("values must be strictly increasing");
        }
        Ok(())
    }

    /// Budget and truncation rank of point `index`, rank-grids budget-major.
    fn point(&self, index: usize, base: SparsityBudget) -> (SparsityBudget, Option<usize>) {
        match self {
            SweepGrid::Lambda { values } => (SparsityBudget::Penalized(values[index]), None),
            SweepGrid::K { values } => (SparsityBudget::Constrained(values[index]), None),
            SweepGrid::Rank { ranks, budgets } if budgets.is_empty() => (base, Some(ranks[index])),
            SweepGrid::Rank { ranks, budgets } => (
                budgets[index / ranks.len()],
                Some(ranks[index % ranks.len()]),
            ),
        }
    }
}

fn parse_int_list(text: &str) -> Result<Vec<usize>> {
    let int = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("expected an integer, got {t:?}")))
    };
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim) {
        match item.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (int(a)?, int(b)?);
                if a > b {
                    return Err(Error::InvalidArgument(format!("empty range {item:?}")));
                }
                out.extend(a..=b);
            }
            None => out.push(int(item)?),
        }
    }
    Ok(out)
}

/// `k:1,2,5`, `lambda:1e-3,1e-2` or `rank:1-20,40`; rank grids parsed this
/// way use the instance's own budget. The result is validated.
impl FromStr for SweepGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (axis, values) = s.split_once(':').ok_or_else(|| {
            Error::InvalidArgument(format!("expected k:..., lambda:... or rank:..., got {s:?}"))
        })?;
        let grid = match axis.trim() {
            "k" => SweepGrid::K {
                values: parse_int_list(values)?,
            },
            "rank" => SweepGrid::Rank {
                ranks: parse_int_list(values)?,
                budgets: vec![],
            },
            "lambda" => SweepGrid::Lambda {
                values: values
                    .split(',')
                    .map(|t| positive_real(t.trim()))
                    .collect::<Result<_>>()?,
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown grid axis {other:?}; use k, lambda or rank"
                )))
            }
        };
        grid.validate()?;
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub budget: SparsityBudget,
    /// Truncation rank for rank sweeps.
    pub rank_approx: Option<usize>,
    /// Primalized value at the full matrix, rank sweeps only.
    pub p_x: Option<f64>,
    pub certificate: GapCertificate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub certify: CertifyOptions,
    /// Rank of the factorization used by λ and k sweeps; `None` keeps the
    /// exact rank of `X`.
    pub rank_approx: Option<usize>,
    /// Pool width; 0 lets rayon decide.
    pub workers: usize,
}

/// Certificates for every grid point, ordered by grid index.
pub fn run_sweep(
    inst: &ProblemInstance,
    grid: &SweepGrid,
    seed: u64,
    opts: &SweepOptions,
) -> Result<Vec<SweepRow>> {
    inst.validate()?;
    grid.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    pool.install(|| match grid {
        SweepGrid::Rank { ranks, budgets } => rank_sweep(inst, grid, ranks, budgets, seed, opts),
        _ => budget_sweep(inst, grid, seed, opts),
    })
}

fn budget_sweep(
    inst: &ProblemInstance,
    grid: &SweepGrid,
    seed: u64,
    opts: &SweepOptions,
) -> Result<Vec<SweepRow>> {
    let svd = match opts.rank_approx {
        Some(r) => compact_svd(&inst.x_matrix, Some(r), None)?,
        None => compact_svd(&inst.x_matrix, None, Some(EXACT_RANK_RTOL))?,
    };
    let base = match opts.rank_approx {
        Some(_) => inst.with_x(svd.low_rank())?,
        None => inst.clone(),
    };
    (0..grid.len())
        .into_par_iter()
        .map(|index| {
            let (budget, _) = grid.point(index, inst.budget);
            let point = base.with_budget(budget)?;
            let certificate =
                certify_with(&point, &svd, derive_seed(seed, index as u64), &opts.certify)?;
            Ok(SweepRow {
                index,
                budget,
                rank_approx: opts.rank_approx,
                p_x: None,
                certificate,
            })
        })
        .collect()
}

fn rank_sweep(
    inst: &ProblemInstance,
    grid: &SweepGrid,
    ranks: &[usize],
    budgets: &[SparsityBudget],
    seed: u64,
    opts: &SweepOptions,
) -> Result<Vec<SweepRow>> {
    let p = inst.n().min(inst.m());
    if let Some(&r) = ranks.iter().find(|&&r| r > p) {
        return Err(Error::RankOutOfRange { rank: r, max: p });
    }
    let budgets: Vec<SparsityBudget> = if budgets.is_empty() {
        vec![inst.budget]
    } else {
        budgets.to_vec()
    };
    let references: Vec<FullRankReference> = budgets
        .par_iter()
        .enumerate()
        .map(|(b, &budget)| {
            let point = inst.with_budget(budget)?;
            FullRankReference::new(&point, derive_seed(seed, b as u64), &opts.certify)
        })
        .collect::<Result<_>>()?;
    (0..grid.len())
        .into_par_iter()
        .map(|index| {
            let (budget, rank) = grid.point(index, inst.budget);
            let reference = &references[index / ranks.len()];
            let rank = rank.expect("rank grid point");
            let certificate = reference.bounds_at(rank)?;
            Ok(SweepRow {
                index,
                budget,
                rank_approx: Some(rank),
                p_x: Some(reference.primalized().best.opt_value),
                certificate,
            })
        })
        .collect()
}

/// Singular values below this fraction of `σ₁` are dropped from the factorization
/// of an untruncated sweep.
const EXACT_RANK_RTOL: f64 = 1e-13;

/// Named parameter sets reproducing the published experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Exp1Regression,
    Exp1Logistic,
    Exp2,
    Exp3,
}

/// Expected location of the user-supplied gene-expression data for `exp3`.
pub const EXP3_X_PATH: &str = "data/leukemia_x.csv";
pub const EXP3_Y_PATH: &str = "data/leukemia_y.csv";

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Exp1Regression,
        Preset::Exp1Logistic,
        Preset::Exp2,
        Preset::Exp3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Exp1Regression => "exp1-regression",
            Preset::Exp1Logistic => "exp1-logistic",
            Preset::Exp2 => "exp2",
            Preset::Exp3 => "exp3",
        }
    }

    /// Generator for the synthetic presets; `exp3` reads user data instead.
    pub fn generator(self, seed: u64) -> Option<GenSpec> {
        match self {
            Preset::Exp1Regression => Some(GenSpec::experiment1(Loss::Quadratic, seed)),
            Preset::Exp1Logistic => Some(GenSpec::experiment1(Loss::Logistic, seed)),
            Preset::Exp2 => Some(GenSpec {
                spectrum: Spectrum::Bell,
                ..GenSpec::experiment1(Loss::Quadratic, seed)
            }),
            Preset::Exp3 => None,
        }
    }

    pub fn loss(self) -> Loss {
        match self {
            Preset::Exp1Regression | Preset::Exp2 => Loss::Quadratic,
            Preset::Exp1Logistic | Preset::Exp3 => Loss::Logistic,
        }
    }

    pub fn ridge(self) -> RidgeForm {
        match self {
            Preset::Exp1Regression | Preset::Exp1Logistic => RidgeForm::penalty(0.01),
            Preset::Exp2 => RidgeForm::ball(30.0),
            Preset::Exp3 => RidgeForm::ball(50.0),
        }
    }

    /// Columns are standardized before solving.
    pub fn standardize(self) -> bool {
        self == Preset::Exp3
    }

    /// Grid for a design matrix of shape `n × m`.
    pub fn grid(self, n: usize, m: usize) -> SweepGrid {
        let all_ranks: Vec<usize> = (1..=n.min(m)).collect();
        match self {
            Preset::Exp1Regression => SweepGrid::Lambda {
                values: vec![1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0],
            },
            Preset::Exp1Logistic => SweepGrid::K {
                values: [1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 25, 30]
                    .into_iter()
                    .filter(|&k| k <= m)
                    .collect(),
            },
            Preset::Exp2 => SweepGrid::Rank {
                ranks: all_ranks,
                budgets: [1e-4, 1e-3, 1e-2].map(SparsityBudget::Penalized).to_vec(),
            },
            Preset::Exp3 => SweepGrid::Rank {
                ranks: all_ranks,
                budgets: vec![SparsityBudget::Penalized(0.1)],
            },
        }
    }

    /// Instance at the first grid point, ready for [`run_sweep`].
    pub fn instance(
        self,
        x: DMatrix<f64>,
        y: DVector<f64>,
    ) -> Result<(ProblemInstance, SweepGrid)> {
        let (n, m) = x.shape();
        let grid = self.grid(n, m);
        let (budget, _) = grid.point(0, SparsityBudget::Penalized(0.0));
        let inst = ProblemInstance::new(x, y, self.loss(), self.ridge(), budget)?;
        Ok((inst, grid))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown preset {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_spec(loss: Loss, seed: u64) -> GenSpec {
        GenSpec {
            n: 40,
            m: 12,
            rank: 3,
            sparsity: 4,
            ..GenSpec::experiment1(loss, seed)
        }
    }

    #[test]
    fn experiment1_shapes() {
        let d = generate(&GenSpec::experiment1(Loss::Quadratic, 5)).unwrap();
        assert_eq!(d.x.shape(), (1000, 100));
        assert_eq!(d.y.len(), 1000);
        assert_eq!(d.beta.iter().filter(|b| **b != 0.0).count(), 10);
        let s = crate::spectra::singular_values(&d.x);
        assert!(s[10] <= 1e-10 * s[0]);
    }

    #[test]
    fn noiseless_zero_signal_gives_zero_response() {
        let spec = GenSpec {
            beta_std: 0.0,
            noise_std: 0.0,
            ..small_spec(Loss::Quadratic, 3)
        };
        assert!(generate(&spec).unwrap().y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn labels_follow_the_sign_rule() {
        let spec = small_spec(Loss::Logistic, 8);
        let d = generate(&spec).unwrap();
        let noise = SeededRng::with_stream(8, 2).normal_vec(spec.n);
        let z = &d.x * &d.beta;
        for i in 0..spec.n {
            let expect = if z[i] + noise[i] >= 0.0 { 1.0 } else { -1.0 };
            assert_eq!(d.y[i], expect);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec(Loss::Quadratic, 21);
        let (a, b) = (generate(&spec).unwrap(), generate(&spec).unwrap());
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn gen_spec_parsing() {
        let s =
            GenSpec::parse("n=50, m=8,rank=2,spectrum=bell,noise=0", Loss::Quadratic, 1).unwrap();
        assert_eq!((s.n, s.m, s.rank, s.sparsity), (50, 8, 2, 10));
        assert_eq!(s.spectrum, Spectrum::Bell);
        assert_eq!(s.noise_std, 0.0);
        assert!(GenSpec::parse("n=abc", Loss::Quadratic, 1).is_err());
        assert!(GenSpec::parse("depth=3", Loss::Quadratic, 1).is_err());
        assert!(GenSpec::parse("n", Loss::Quadratic, 1).is_err());
    }

    #[test]
    fn standardized_columns() {
        let mut x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 6.0, 5.0]);
        standardize_columns(&mut x);
        let c0 = x.column(0);
        assert!(c0.sum().abs() < 1e-12);
        assert!((c0.norm_squared() / 3.0 - 1.0).abs() < 1e-12);
        assert!(x.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn label_coding() {
        let y = DVector::from_vec(vec![0.0, 1.0, 1.0]);
        assert_eq!(binary_labels(&y).unwrap().as_slice(), &[-1.0, 1.0, 1.0]);
        let s = DVector::from_vec(vec![-1.0, 1.0]);
        assert_eq!(binary_labels(&s).unwrap(), s);
        assert!(binary_labels(&DVector::from_vec(vec![0.5])).is_err());
    }

    #[test]
    fn grids_must_be_sorted_and_nonempty() {
        assert!(SweepGrid::Lambda { values: vec![] }.validate().is_err());
        assert!(SweepGrid::Lambda {
            values: vec![0.1, 0.01]
        }
        .validate()
        .is_err());
        assert!(SweepGrid::K { values: vec![1, 1] }.validate().is_err());
        assert!(SweepGrid::Rank {
            ranks: vec![0, 1],
            budgets: vec![]
        }
        .validate()
        .is_err());
        assert!(SweepGrid::K { values: vec![1, 3] }.validate().is_ok());
        for p in Preset::ALL {
            p.grid(1000, 100).validate().unwrap();
        }
    }

    #[test]
    fn grid_text_forms() {
        assert_eq!(
            "rank:1-3,7".parse::<SweepGrid>().unwrap(),
            SweepGrid::Rank {
                ranks: vec![1, 2, 3, 7],
                budgets: vec![]
            }
        );
        assert_eq!(
            "lambda:1e-3, 1e-2".parse::<SweepGrid>().unwrap(),
            SweepGrid::Lambda {
                values: vec![1e-3, 1e-2]
            }
        );
        for bad in [
            "k:3,1",
            "k:",
            "rank:5-2",
            "gamma:1",
            "lambda:-1",
            "rank:0-2",
        ] {
            assert!(bad.parse::<SweepGrid>().is_err(), "{bad}");
        }
    }

    #[test]
    fn preset_parameters() {
        assert_eq!("exp2".parse::<Preset>().unwrap(), Preset::Exp2);
        assert!("exp4".parse::<Preset>().is_err());
        let r = Preset::Exp1Regression;
        assert_eq!(r.ridge(), RidgeForm::penalty(0.01));
        let g = r.generator(0).unwrap();
        assert_eq!(
            (g.n, g.m, g.rank, g.sparsity, g.beta_std),
            (1000, 100, 10, 10, 5.0)
        );
        assert_eq!(Preset::Exp2.ridge(), RidgeForm::ball(30.0));
        assert_eq!(Preset::Exp3.ridge(), RidgeForm::ball(50.0));
        assert_eq!(Preset::Exp3.grid(72, 3751).len(), 72);
        match Preset::Exp2.grid(1000, 100) {
            SweepGrid::Rank { ranks, budgets } => {
                assert_eq!(ranks, (1..=100).collect::<Vec<_>>());
                assert_eq!(budgets.len(), 3);
            }
            other => panic!("unexpected grid {other:?}"),
        }
    }

    fn small_instance(seed: u64, ridge: RidgeForm) -> ProblemInstance {
        let d = generate(&small_spec(Loss::Quadratic, seed)).unwrap();
        ProblemInstance::new(
            d.x,
            d.y,
            Loss::Quadratic,
            ridge,
            SparsityBudget::Constrained(2),
        )
        .unwrap()
    }

    #[test]
    fn sweep_rows_are_ordered_and_reproducible() {
        let inst = small_instance(4, RidgeForm::penalty(0.1));
        let grid = SweepGrid::K {
            values: vec![1, 2, 3, 5],
        };
        let opts = SweepOptions {
            workers: 3,
            certify: CertifyOptions {
                trials: 4,
                ..CertifyOptions::default()
            },
            ..SweepOptions::default()
        };
        let a = run_sweep(&inst, &grid, 9, &opts).unwrap();
        let b = run_sweep(
            &inst,
            &grid,
            9,
            &SweepOptions {
                workers: 1,
                ..opts.clone()
            },
        )
        .unwrap();
        assert_eq!(a, b);
        let ks: Vec<f64> = a.iter().map(|r| r.certificate.k_or_lambda).collect();
        assert_eq!(ks, vec![1.0, 2.0, 3.0, 5.0]);
        for w in a.windows(2) {
            let (lo, hi) = (&w[0].certificate, &w[1].certificate);
            assert!(hi.bidual_value <= lo.bidual_value + 1e-7 * (1.0 + lo.bidual_value.abs()));
        }
    }

    #[test]
    fn rank_sweep_has_zero_zeta_at_full_rank() {
        let inst = small_instance(6, RidgeForm::ball(5.0));
        let grid = SweepGrid::Rank {
            ranks: (1..=12).collect(),
            budgets: vec![
                SparsityBudget::Penalized(1e-3),
                SparsityBudget::Penalized(1e-2),
            ],
        };
        let opts = SweepOptions {
            certify: CertifyOptions {
                trials: 3,
                ..CertifyOptions::default()
            },
            ..SweepOptions::default()
        };
        let rows = run_sweep(&inst, &grid, 2, &opts).unwrap();
        assert_eq!(rows.len(), 24);
        for row in &rows {
            let r = row.rank_approx.unwrap();
            assert_eq!(r, row.index % 12 + 1);
            if r >= 3 {
                assert_eq!(row.certificate.zeta, 0.0);
                assert_eq!(row.certificate.zeta_r, 0.0);
            }
        }
        let penalty = small_instance(6, RidgeForm::penalty(0.1));
        assert!(run_sweep(&penalty, &grid, 2, &opts).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn chain_flags_recompute_from_row_fields(seed in 0u64..1000, lam in 1e-3f64..1e-1) {
            let inst = small_instance(seed, RidgeForm::penalty(0.05));
            let grid = SweepGrid::Lambda { values: vec![lam, 2.0 * lam] };
            let opts = SweepOptions {
                certify: CertifyOptions { trials: 2, ..CertifyOptions::default() },
                ..SweepOptions::default()
            };
            for row in run_sweep(&inst, &grid, seed, &opts).unwrap() {
                let cert = &row.certificate;
                prop_assert_eq!(cert.family, inst.with_budget(row.budget).unwrap().family());
                for c in &cert.chain {
                    prop_assert_eq!(c.recheck(), c.ok);
                    prop_assert_eq!(c.residual, c.lhs - c.rhs);
                }
            }
        }
    }
}

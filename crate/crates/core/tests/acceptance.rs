//! Acceptance suite: nine criteria, one PASS/FAIL line each.
//!
//! Ground truth for the bound checks comes from a support-enumeration oracle
//! written here from scratch (closed-form ridge solves, and bisection on the
//! multiplier for ball-restricted subproblems), independent of the library's
//! own oracle. Run with `cargo test -p sfsparse-core --test acceptance`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use sfsparse::certify::{certify_with, CertifyOptions, GapCertificate};
use sfsparse::experiment::{
    generate, run_sweep, GenSpec, Preset, Spectrum, SweepOptions, SweepRow,
};
use sfsparse::model::{
    loss_conjugate, loss_gradient, loss_value, Family, Loss, ProblemInstance, RidgeForm, RidgeKind,
    SparsityBudget,
};
use sfsparse::primalize::{primalize, Primalization};
use sfsparse::relax::{
    dual_value, extract_dual_point, reverse_huber, solve_bidual, sum_top_k, u_update_waterfill,
    SolverOptions,
};
use sfsparse::report::{write_sweep_csv, Report};
use sfsparse::rng::SeededRng;
use sfsparse::spectra::{compact_svd, SvdFactors};

/// Bound checks against the oracle: `a ≤ b + CHAIN_TOL·(1 + |b|)`.
const CHAIN_TOL: f64 = 1e-6;
/// Absolute slack on the penalized gap `OPT − p** ≤ λ(r+1)`.
const PEN_GAP_TOL: f64 = 1e-6;
/// Relative excess allowed on `‖w‖² ≤ γ`.
const BALL_TOL: f64 = 1e-7;
/// Entries of an LP vertex within this distance of 0 or 1 count as binary.
const VERTEX_TOL: f64 = 1e-7;
/// Relaxation accuracy requested in every solve.
const TOL_OBJ: f64 = 1e-7;
/// Strong duality: `t* − D(z) ≤ DUALITY_FACTOR·tol_obj·(1 + |t*|)`.
const DUALITY_FACTOR: f64 = 10.0;
/// Identity checks.
const IDENTITY_TOL: f64 = 1e-6;
/// Bracket width at λ = 1e-4, rank ≥ 20, relative to `|p**|`.
const EXP2_WIDTH_FRACTION: f64 = 0.10;
/// Singular values below this fraction of `σ₁` count as zero.
const EXACT_RANK_RTOL: f64 = 1e-13;
const TRIALS: usize = 20;

const BUDGET_1: Duration = Duration::from_secs(60);
const BUDGET_2: Duration = Duration::from_secs(120);
const BUDGET_4: Duration = Duration::from_secs(120);
const BUDGET_6: Duration = Duration::from_secs(5);
const BUDGET_7: Duration = Duration::from_secs(600);
const BUDGET_8: Duration = Duration::from_secs(900);

type Outcome = Result<String, String>;

fn within(a: f64, b: f64) -> bool {
    a <= b + CHAIN_TOL * (1.0 + b.abs())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Enumeration oracle for the quadratic loss (1/2n)‖y − Xw‖².

struct Oracle {
    /// Entry `j`: best objective over supports of size exactly `j`.
    best_by_size: Vec<f64>,
}

impl Oracle {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>, ridge: RidgeForm, max_size: usize) -> Self {
        let (n, m) = x.shape();
        let nf = n as f64;
        let c0 = y.norm_squared() / (2.0 * nf);
        let mut best_by_size = vec![c0; max_size + 1];
        let mut support: Vec<usize> = Vec::with_capacity(max_size);
        fn visit(
            start: usize,
            m: usize,
            max_size: usize,
            support: &mut Vec<usize>,
            f: &mut dyn FnMut(&[usize]),
        ) {
            for i in start..m {
                support.push(i);
                f(support);
                if support.len() < max_size {
                    visit(i + 1, m, max_size, support, f);
                }
                support.pop();
            }
        }
        let mut eval = |s: &[usize]| {
            let xs = x.select_columns(s);
            let a = xs.tr_mul(&xs) / nf;
            let b = xs.tr_mul(y) / nf;
            let value = match ridge.kind {
                RidgeKind::Penalty => penalty_value(&a, &b, c0, ridge.gamma),
                RidgeKind::Ball => ball_value(&a, &b, c0, ridge.gamma),
            };
            let slot = &mut best_by_size[s.len()];
            *slot = slot.min(value);
        };
        if max_size > 0 {
            visit(0, m, max_size, &mut support, &mut eval);
        }
        Self { best_by_size }
    }

    /// `p_con(k)`: best over supports of size at most `k`.
    fn constrained(&self, k: usize) -> f64 {
        self.best_by_size[..=k.min(self.best_by_size.len() - 1)]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// `p_pen(λ)`; requires enumeration up to `m`.
    fn penalized(&self, lambda: f64) -> f64 {
        self.best_by_size
            .iter()
            .enumerate()
            .map(|(j, v)| v + lambda * j as f64)
            .fold(f64::INFINITY, f64::min)
    }
}

/// `min c0 − bᵀw + ½wᵀAw + (γ/2)‖w‖²`.
fn penalty_value(a: &DMatrix<f64>, b: &DVector<f64>, c0: f64, gamma: f64) -> f64 {
    let shifted = a + DMatrix::identity(a.nrows(), a.nrows()) * gamma;
    let w = shifted
        .cholesky()
        .expect("ridge system is positive definite")
        .solve(b);
    c0 - 0.5 * b.dot(&w)
}

/// `min c0 − bᵀw + ½wᵀAw` over `‖w‖² ≤ γ`, by bisection on the multiplier.
fn ball_value(a: &DMatrix<f64>, b: &DVector<f64>, c0: f64, gamma: f64) -> f64 {
    let eig = SymmetricEigen::new(a.clone());
    let c = eig.eigenvectors.tr_mul(b);
    let lam = &eig.eigenvalues;
    let lam_max = lam.iter().copied().fold(0.0, f64::max);
    let cutoff = 1e-12 * lam_max.max(1e-300);
    // Minimum-norm least-squares point in the eigenbasis.
    let coords = |mu: f64| -> DVector<f64> {
        DVector::from_iterator(
            c.len(),
            c.iter().zip(lam.iter()).map(|(&ci, &li)| {
                if mu == 0.0 {
                    if li > cutoff {
                        ci / li
                    } else {
                        0.0
                    }
                } else {
                    ci / (li.max(0.0) + mu)
                }
            }),
        )
    };
    let value_of = |w: &DVector<f64>| -> f64 {
        let aw: f64 = w.iter().zip(lam.iter()).map(|(wi, li)| li * wi * wi).sum();
        c0 - c.dot(w) + 0.5 * aw
    };
    let free = coords(0.0);
    if free.norm_squared() <= gamma {
        return value_of(&free);
    }
    let (mut lo, mut hi) = (0.0, c.norm() / gamma.sqrt());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if coords(mid).norm_squared() > gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    value_of(&coords(hi))
}

// ---------------------------------------------------------------------------
// Instances and the certification pipeline.

fn small_instance(
    seed: u64,
    rank: usize,
    ridge: RidgeForm,
    budget: SparsityBudget,
) -> Result<ProblemInstance, String> {
    let spec = GenSpec {
        n: 30,
        m: 12,
        rank,
        sparsity: 3,
        beta_std: 1.0,
        noise_std: 0.5,
        loss: Loss::Quadratic,
        spectrum: Spectrum::Gaussian,
        seed,
    };
    let d = generate(&spec).map_err(fail)?;
    ProblemInstance::new(d.x, d.y, Loss::Quadratic, ridge, budget).map_err(fail)
}

fn certify_options() -> CertifyOptions {
    CertifyOptions {
        solver: SolverOptions {
            tol_obj: TOL_OBJ,
            ..SolverOptions::default()
        },
        trials: TRIALS,
        ..CertifyOptions::default()
    }
}

struct Run {
    cert: GapCertificate,
    prim: Primalization,
    rank: usize,
}

fn run(inst: &ProblemInstance, seed: u64) -> Result<Run, String> {
    let opts = certify_options();
    let svd: SvdFactors = compact_svd(&inst.x_matrix, None, Some(EXACT_RANK_RTOL)).map_err(fail)?;
    let sol = solve_bidual(inst, &svd, &opts.solver).map_err(fail)?;
    let prim = primalize(inst, &svd, &sol, seed, TRIALS).map_err(fail)?;
    let cert = certify_with(inst, &svd, seed, &opts).map_err(fail)?;
    ensure(cert.opt_value == prim.best.opt_value, || {
        "certificate and primalization disagree".into()
    })?;
    Ok(Run {
        cert,
        prim,
        rank: sol.rank,
    })
}

/// Tallies fractional LP entries against the vertex bound, per solve.
#[derive(Default)]
struct VertexTally {
    solves: usize,
    violations: Vec<String>,
}

impl VertexTally {
    fn record(&mut self, label: &str, family: Family, r: usize, prim: &Primalization) {
        let limit = match family {
            Family::PenalizedPenalty => r + 1,
            _ => r + 2,
        };
        for p in &prim.all {
            self.solves += 1;
            let fractional = p
                .u_bar
                .iter()
                .filter(|&&u| u > VERTEX_TOL && u < 1.0 - VERTEX_TOL)
                .count();
            if fractional > limit || p.nonbound_count > limit {
                self.violations.push(format!(
                    "{label} trial {}: {fractional} fractional entries > {limit}",
                    p.trial
                ));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Criteria.

fn chain_suite(tally: &mut VertexTally) -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..50u64 {
        let r = 1 + (i % 3) as usize;
        let gamma = [0.01, 0.1][((i / 3) % 2) as usize];
        let k = 1 + ((i / 6) % 4) as usize;
        let seed = 1000 + i;
        let inst = small_instance(
            seed,
            r,
            RidgeForm::penalty(gamma),
            SparsityBudget::Constrained(k),
        )?;
        let Run { cert, prim, rank } = run(&inst, seed)?;
        ensure(rank == r, || format!("instance {i}: rank {rank} != {r}"))?;
        let wide = (k + r + 2).min(inst.m());
        let oracle = Oracle::new(&inst.x_matrix, &inst.y, inst.ridge, wide);
        let (p_k, p_wide) = (oracle.constrained(k), oracle.constrained(wide));
        let (opt, p2) = (cert.opt_value, cert.bidual_value);
        let label = format!("instance {i} (r={r}, gamma={gamma}, k={k})");
        ensure(within(p2, p_k), || {
            format!("{label}: p** {p2} > p_con(k) {p_k}")
        })?;
        ensure(within(opt, p2), || format!("{label}: OPT {opt} > p** {p2}"))?;
        ensure(within(p_wide, opt), || {
            format!("{label}: p_con(k+r+2) {p_wide} > OPT {opt}")
        })?;
        ensure(cert.opt_card <= wide, || {
            format!("{label}: card {} > {wide}", cert.opt_card)
        })?;
        ensure(cert.chain_ok(), || {
            format!("{label}: certificate chain violated")
        })?;
        worst = worst.max((p2 - p_k).max(opt - p2).max(p_wide - opt));
        tally.record(&label, inst.family(), r, &prim);
    }
    Ok(format!("50 instances, largest chain residual {worst:.3e}"))
}

fn penalized_suite(tally: &mut VertexTally) -> Outcome {
    let mut worst_gap_ratio = 0.0f64;
    for i in 0..50u64 {
        let r = 1 + (i % 3) as usize;
        let gamma = [0.01, 0.1][((i / 3) % 2) as usize];
        let lambda = [1e-3, 1e-2][((i / 6) % 2) as usize];
        let seed = 2000 + i;
        let inst = small_instance(
            seed,
            r,
            RidgeForm::penalty(gamma),
            SparsityBudget::Penalized(lambda),
        )?;
        let Run { cert, prim, rank } = run(&inst, seed)?;
        ensure(rank == r, || format!("instance {i}: rank {rank} != {r}"))?;
        let oracle = Oracle::new(&inst.x_matrix, &inst.y, inst.ridge, inst.m());
        let p_pen = oracle.penalized(lambda);
        let (opt, p2) = (cert.opt_value, cert.bidual_value);
        let allowance = lambda * (r as f64 + 1.0);
        let label = format!("instance {i} (r={r}, gamma={gamma}, lambda={lambda})");
        ensure(opt - p2 <= allowance + PEN_GAP_TOL, || {
            format!(
                "{label}: OPT - p** = {} > lambda(r+1) = {allowance}",
                opt - p2
            )
        })?;
        ensure(
            p_pen >= p2 - PEN_GAP_TOL && p_pen <= opt + PEN_GAP_TOL,
            || format!("{label}: p_pen {p_pen} outside [{p2}, {opt}]"),
        )?;
        ensure(cert.chain_ok(), || {
            format!("{label}: certificate chain violated")
        })?;
        worst_gap_ratio = worst_gap_ratio.max((opt - p2) / allowance);
        tally.record(&label, inst.family(), r, &prim);
    }
    Ok(format!(
        "50 instances, largest (OPT - p**)/(lambda(r+1)) = {worst_gap_ratio:.3}"
    ))
}

fn ball_suite(tally: &mut VertexTally) -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..30u64 {
        let r = 1 + (i % 3) as usize;
        let gamma = [1.0, 30.0][((i / 3) % 2) as usize];
        let budget = if (i / 6) % 2 == 0 {
            SparsityBudget::Constrained(1 + ((i / 12) % 4) as usize)
        } else {
            SparsityBudget::Penalized([1e-3, 1e-2][((i / 12) % 2) as usize])
        };
        let seed = 3000 + i;
        let inst = small_instance(seed, r, RidgeForm::ball(gamma), budget)?;
        let Run { cert, prim, rank } = run(&inst, seed)?;
        ensure(rank == r, || format!("instance {i}: rank {rank} != {r}"))?;
        let label = format!("instance {i} (r={r}, gamma={gamma}, {budget})");
        let sq: f64 = cert.w.iter().map(|w| w * w).sum();
        ensure(sq <= gamma * (1.0 + BALL_TOL), || {
            format!("{label}: |w|^2 = {sq} > gamma")
        })?;
        let (opt, p2) = (cert.opt_value, cert.bidual_value);
        match budget {
            SparsityBudget::Constrained(k) => {
                let wide = (k + r + 2).min(inst.m());
                ensure(cert.opt_card <= wide, || {
                    format!("{label}: card {} > {wide}", cert.opt_card)
                })?;
                let oracle = Oracle::new(&inst.x_matrix, &inst.y, inst.ridge, wide);
                let (p_k, p_wide) = (oracle.constrained(k), oracle.constrained(wide));
                ensure(within(p2, p_k), || {
                    format!("{label}: p** {p2} > p_con(k) {p_k}")
                })?;
                ensure(within(opt, p2), || format!("{label}: OPT {opt} > p** {p2}"))?;
                ensure(within(p_wide, opt), || {
                    format!("{label}: p_con(k+r+2) {p_wide} > OPT {opt}")
                })?;
                worst = worst.max((p2 - p_k).max(opt - p2).max(p_wide - opt));
            }
            SparsityBudget::Penalized(lambda) => {
                let oracle = Oracle::new(&inst.x_matrix, &inst.y, inst.ridge, inst.m());
                let p_pen = oracle.penalized(lambda);
                let upper = p2 + lambda * (r as f64 + 1.0);
                ensure(within(p2, p_pen), || {
                    format!("{label}: p** {p2} > p_pen {p_pen}")
                })?;
                ensure(within(p_pen, opt), || {
                    format!("{label}: p_pen {p_pen} > OPT {opt}")
                })?;
                ensure(within(opt, upper), || {
                    format!("{label}: OPT {opt} > p** + lambda(r+1) {upper}")
                })?;
                worst = worst.max((p2 - p_pen).max(p_pen - opt).max(opt - upper));
            }
        }
        ensure(cert.chain_ok(), || {
            format!("{label}: certificate chain violated")
        })?;
        tally.record(&label, inst.family(), r, &prim);
    }
    Ok(format!("30 instances, largest chain residual {worst:.3e}"))
}

fn strong_duality() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let r = 1 + (i % 5) as usize;
        let budget = if i % 2 == 0 {
            SparsityBudget::Constrained(1 + ((i / 2) % 6) as usize)
        } else {
            SparsityBudget::Penalized([1e-3, 1e-2, 1e-1][((i / 2) % 3) as usize])
        };
        let ridge = if (i / 4) % 2 == 0 {
            RidgeForm::penalty([0.01, 0.1, 1.0][((i / 8) % 3) as usize])
        } else {
            RidgeForm::ball([1.0, 10.0, 30.0][((i / 8) % 3) as usize])
        };
        let spec = GenSpec {
            n: 60,
            m: 20,
            rank: r,
            sparsity: 4,
            beta_std: 1.0,
            noise_std: 1.0,
            loss: Loss::Quadratic,
            spectrum: Spectrum::Gaussian,
            seed: 4000 + i,
        };
        let d = generate(&spec).map_err(fail)?;
        let inst = ProblemInstance::new(d.x, d.y, Loss::Quadratic, ridge, budget).map_err(fail)?;
        let svd = compact_svd(&inst.x_matrix, None, Some(EXACT_RANK_RTOL)).map_err(fail)?;
        let opts = SolverOptions {
            tol_obj: TOL_OBJ,
            ..SolverOptions::default()
        };
        let sol = solve_bidual(&inst, &svd, &opts).map_err(fail)?;
        let (z, _) = extract_dual_point(&inst, &sol).map_err(fail)?;
        let d_val = dual_value(&inst, &z).map_err(fail)?;
        let scale = 1.0 + sol.t_star.abs();
        let excess = (sol.t_star - d_val) / (TOL_OBJ * scale);
        ensure(excess <= DUALITY_FACTOR, || {
            format!(
                "solve {i} ({}, {ridge}, {budget}): t* - D(z) = {:.3e} exceeds {DUALITY_FACTOR} tol_obj (1+|t*|)",
                inst.family().as_str(),
                sol.t_star - d_val
            )
        })?;
        worst = worst.max(excess);
    }
    Ok(format!(
        "100 solves, largest (t* - D(z)) / (tol_obj (1+|t*|)) = {worst:.3}"
    ))
}

/// `min_λ λk + Σ max(0, cᵢ − λ)` over the sorted breakpoints `λ ∈ {cᵢ}`.
fn top_k_by_breakpoints(c: &[f64], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let mut pts = c.to_vec();
    pts.sort_by(|a, b| b.total_cmp(a));
    pts.iter()
        .map(|&lam| lam * k as f64 + c.iter().map(|ci| (ci - lam).max(0.0)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Maximizer of a concave function on `[lo, hi]` by golden-section search.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..300 {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        }
    }
    f(0.5 * (lo + hi)).max(fa).max(fb)
}

/// Grid minimum of `Σ xᵢ²/uᵢ` over `u ∈ [0,1]^m`, `1ᵀu ≤ k`, for `m ≤ 3`.
fn perspective_grid(x: &[f64], k: f64, steps: usize) -> f64 {
    let m = x.len();
    let mut best = f64::INFINITY;
    let total = (steps + 1).pow(m as u32);
    for code in 0..total {
        let mut rest = code;
        let mut u = [0.0; 3];
        for ui in u.iter_mut().take(m) {
            *ui = (rest % (steps + 1)) as f64 / steps as f64;
            rest /= steps + 1;
        }
        if u[..m].iter().sum::<f64>() > k + 1e-12 {
            continue;
        }
        let v: f64 = x
            .iter()
            .zip(&u)
            .map(|(xi, ui)| match (*xi == 0.0, *ui == 0.0) {
                (true, _) => 0.0,
                (false, true) => f64::INFINITY,
                (false, false) => xi * xi / ui,
            })
            .sum();
        best = best.min(v);
    }
    best
}

fn identities() -> Outcome {
    let mut rng = SeededRng::new(6);
    let mut checks = 0usize;
    // Top-k sums, including negative entries.
    for len in 1..=10 {
        for _ in 0..20 {
            let c = rng.normal_vec(len);
            for k in 0..=len {
                let direct = sum_top_k(&c, k).map_err(fail)?;
                let variational = top_k_by_breakpoints(&c, k);
                ensure(
                    (direct - variational).abs() <= IDENTITY_TOL * (1.0 + direct.abs()),
                    || format!("s_k mismatch on {c:?}, k={k}: {direct} vs {variational}"),
                )?;
                checks += 1;
            }
        }
    }
    // Perspective / reverse-Huber duality on m ≤ 3:
    // min_u Σ xᵢ²/uᵢ = max_{t>0} Σ 2t B(|xᵢ|/√t) − tk.
    for len in 1..=3 {
        for _ in 0..10 {
            let x = rng.normal_vec(len);
            for k in 1..=len {
                let kf = k as f64;
                let u = u_update_waterfill(&x, k);
                let primal: f64 = x
                    .iter()
                    .zip(&u)
                    .map(|(xi, ui)| if *ui > 0.0 { xi * xi / ui } else { 0.0 })
                    .sum();
                let dual_fn = |t: f64| {
                    x.iter()
                        .map(|xi| 2.0 * t * reverse_huber(xi.abs() / t.sqrt()))
                        .sum::<f64>()
                        - t * kf
                };
                let l1: f64 = x.iter().map(|v| v.abs()).sum();
                let dual = golden_max(dual_fn, 0.0, 4.0 * (l1 / kf).powi(2) + 1.0);
                ensure(
                    (primal - dual).abs() <= IDENTITY_TOL * (1.0 + primal),
                    || format!("reverse-Huber identity on {x:?}, k={k}: {primal} vs {dual}"),
                )?;
                let steps = if len == 3 { 100 } else { 400 };
                let grid = perspective_grid(&x, kf, steps);
                ensure(primal <= grid + IDENTITY_TOL * (1.0 + grid), || {
                    format!("grid point beats the water-filling value on {x:?}, k={k}")
                })?;
                checks += 2;
            }
        }
    }
    // Water-filling KKT: equal ratios |ṽᵢ|/uᵢ on the fractional set,
    // capped entries at least the level, budget tight.
    for len in 3..=10 {
        for _ in 0..20 {
            let v = rng.normal_vec(len);
            for k in 1..len {
                let u = u_update_waterfill(&v, k);
                let sum: f64 = u.iter().sum();
                ensure((sum - k as f64).abs() <= IDENTITY_TOL, || {
                    format!("waterfill budget {sum} != {k}")
                })?;
                let ratios: Vec<f64> = v
                    .iter()
                    .zip(&u)
                    .filter(|(_, &ui)| ui > 0.0 && ui < 1.0)
                    .map(|(vi, ui)| vi.abs() / ui)
                    .collect();
                if let Some(&tau) = ratios.first() {
                    for &q in &ratios {
                        ensure((q - tau).abs() <= IDENTITY_TOL * tau, || {
                            format!("waterfill ratios {ratios:?} differ")
                        })?;
                    }
                    for (vi, ui) in v.iter().zip(&u) {
                        if *ui >= 1.0 {
                            ensure(vi.abs() >= tau * (1.0 - IDENTITY_TOL), || {
                                format!("capped entry {vi} below level {tau}")
                            })?;
                        }
                    }
                }
                ensure(u.iter().all(|&ui| (0.0..=1.0).contains(&ui)), || {
                    "u outside [0,1]".into()
                })?;
                checks += 1;
            }
        }
    }
    // Fenchel–Young: f(z) + f*(s) ≥ zᵀs, with equality at s = ∇f(z).
    for loss in [Loss::Quadratic, Loss::Logistic] {
        for trial in 0..50 {
            let n = 1 + trial % 7;
            let z = rng.normal_vec(n);
            let y: Vec<f64> = match loss {
                Loss::Quadratic => rng.normal_vec(n),
                Loss::Logistic => rng
                    .normal_vec(n)
                    .iter()
                    .map(|v| if *v >= 0.0 { 1.0 } else { -1.0 })
                    .collect(),
            };
            let f = loss_value(loss, &z, &y).map_err(fail)?;
            let g = loss_gradient(loss, &z, &y).map_err(fail)?;
            let fy = |s: &[f64]| -> Result<f64, String> {
                let conj = loss_conjugate(loss, s, &y).map_err(fail)?;
                Ok(f + conj - s.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>())
            };
            let at_gradient = fy(g.as_slice())?;
            ensure(at_gradient.abs() <= IDENTITY_TOL, || {
                format!("{loss}: Fenchel-Young equality off by {at_gradient}")
            })?;
            let s: Vec<f64> = match loss {
                Loss::Quadratic => rng.normal_vec(n),
                Loss::Logistic => y
                    .iter()
                    .map(|yi| -rng.uniform() / (n as f64 * yi))
                    .collect(),
            };
            let gap = fy(&s)?;
            ensure(gap >= -IDENTITY_TOL, || {
                format!("{loss}: Fenchel-Young inequality {gap}")
            })?;
            checks += 2;
        }
    }
    Ok(format!("{checks} identity checks"))
}

fn preset_rows(preset: Preset, seed: u64, workers: usize) -> Result<Vec<SweepRow>, String> {
    let spec = preset.generator(seed).ok_or("preset without a generator")?;
    let d = generate(&spec).map_err(fail)?;
    let (inst, grid) = preset.instance(d.x, d.y).map_err(fail)?;
    let opts = SweepOptions {
        certify: certify_options(),
        workers,
        ..SweepOptions::default()
    };
    run_sweep(&inst, &grid, seed, &opts).map_err(fail)
}

fn experiment1() -> Outcome {
    let seed = 1;
    let reg = preset_rows(Preset::Exp1Regression, seed, 0)?;
    for pair in reg.windows(2) {
        let (a, b) = (&pair[0].certificate, &pair[1].certificate);
        ensure(within(a.bidual_value, b.bidual_value), || {
            format!(
                "p** not monotone in lambda: {} at {} > {} at {}",
                a.bidual_value, pair[0].budget, b.bidual_value, pair[1].budget
            )
        })?;
    }
    let gap = |row: &SweepRow| row.certificate.opt_value - row.certificate.bidual_value;
    let (small, large) = (
        reg.first().ok_or("empty sweep")?,
        reg.last().ok_or("empty sweep")?,
    );
    ensure(gap(small) <= gap(large), || {
        format!(
            "gap at smallest lambda {} exceeds gap at largest lambda {}",
            gap(small),
            gap(large)
        )
    })?;
    let logi = preset_rows(Preset::Exp1Logistic, seed, 0)?;
    for pair in logi.windows(2) {
        let (a, b) = (&pair[0].certificate, &pair[1].certificate);
        ensure(within(b.bidual_value, a.bidual_value), || {
            format!(
                "p** increases from {} to {}: {} -> {}",
                pair[0].budget, pair[1].budget, a.bidual_value, b.bidual_value
            )
        })?;
    }
    for row in reg.iter().chain(&logi) {
        let c = &row.certificate;
        ensure(
            c.trials == TRIALS && c.dispersion.is_finite() && c.dispersion >= 0.0,
            || format!("dispersion not reported at {}", row.budget),
        )?;
        ensure(c.opt_std.is_finite(), || {
            format!("trial spread missing at {}", row.budget)
        })?;
        ensure(c.chain_ok(), || format!("violated chain at {}", row.budget))?;
    }
    Ok(format!(
        "regression gap {:.3e} at lambda {} vs {:.3e} at lambda {}; logistic p** {:.4} -> {:.4} over k",
        gap(small),
        small.budget.value(),
        gap(large),
        large.budget.value(),
        logi[0].certificate.bidual_value,
        logi[logi.len() - 1].certificate.bidual_value
    ))
}

fn experiment2() -> Outcome {
    let rows = preset_rows(Preset::Exp2, 1, 0)?;
    let full_rank = rows
        .iter()
        .filter_map(|r| r.rank_approx)
        .max()
        .ok_or("no ranks")?;
    let mut summary = Vec::new();
    for lambda in [1e-4, 1e-3, 1e-2] {
        let mine: Vec<&SweepRow> = rows
            .iter()
            .filter(|r| r.budget == SparsityBudget::Penalized(lambda))
            .collect();
        ensure(mine.len() == full_rank, || {
            format!("lambda {lambda}: {} ranks", mine.len())
        })?;
        let full = mine
            .iter()
            .find(|r| r.rank_approx == Some(full_rank))
            .ok_or("no full rank row")?;
        ensure(full.certificate.zeta == 0.0, || {
            format!(
                "lambda {lambda}: zeta = {} at full rank",
                full.certificate.zeta
            )
        })?;
        let p_star = full.certificate.bidual_value;
        if lambda == 1e-4 {
            for row in mine
                .iter()
                .filter(|r| r.rank_approx.is_some_and(|r| r >= 20))
            {
                let width = row.certificate.upper_bound - row.certificate.lower_bound;
                ensure(width <= EXP2_WIDTH_FRACTION * p_star.abs(), || {
                    format!(
                        "rank {:?}: bracket width {width} > {EXP2_WIDTH_FRACTION} |p**| = {}",
                        row.rank_approx,
                        EXP2_WIDTH_FRACTION * p_star.abs()
                    )
                })?;
            }
        }
        let zetas: Vec<f64> = mine.iter().map(|r| r.certificate.zeta).collect();
        let third = zetas.len() / 3;
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let (a, b, c) = (
            mean(&zetas[..third]),
            mean(&zetas[third..2 * third]),
            mean(&zetas[2 * third..]),
        );
        ensure(a > b && b > c, || {
            format!("lambda {lambda}: mean zeta by rank third {a} {b} {c} not decreasing")
        })?;
        for row in &mine {
            ensure(row.certificate.chain_ok(), || {
                format!(
                    "lambda {lambda}, rank {:?}: violated chain",
                    row.rank_approx
                )
            })?;
        }
        summary.push(format!(
            "lambda {lambda}: mean zeta {a:.3e} > {b:.3e} > {c:.3e}"
        ));
    }
    Ok(format!("{} rows; {}", rows.len(), summary.join("; ")))
}

fn suite_report(workers: usize) -> Result<(String, String), String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(fail)?;
    pool.install(|| {
        let mut certs = Vec::new();
        for i in 0..10u64 {
            let inst = small_instance(
                1000 + i,
                1 + (i % 3) as usize,
                RidgeForm::penalty(0.1),
                SparsityBudget::Constrained(2),
            )?;
            certs.push(run(&inst, 1000 + i)?.cert);
        }
        let suite = Report::new("acceptance-chain", 1000, &"chain suite", certs)
            .map_err(fail)?
            // A run-dependent timing field must not reach the canonical form.
            .with_timing(workers as f64)
            .canonical_json()
            .map_err(fail)?;
        let rows = preset_rows(Preset::Exp1Regression, 5, workers)?;
        let mut table = Vec::new();
        write_sweep_csv(&mut table, &rows).map_err(fail)?;
        let sweep = Report::new("sweep", 5, &"exp1-regression", rows)
            .map_err(fail)?
            .canonical_json()
            .map_err(fail)?;
        Ok((suite, sweep + &String::from_utf8(table).map_err(fail)?))
    })
}

fn determinism() -> Outcome {
    let first = suite_report(1)?;
    let second = suite_report(2)?;
    let third = suite_report(1)?;
    ensure(first == second && first == third, || {
        "reports differ between repeated runs".into()
    })?;
    Ok(format!(
        "chain suite and exp1-regression sweep identical over 3 runs ({} + {} bytes)",
        first.0.len(),
        first.1.len()
    ))
}

fn timed(budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let out = match (out, budget) {
        (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.1?}, budget {b:?}")),
        (o, _) => o,
    };
    (out, elapsed)
}

fn main() {
    // Accept and ignore libtest arguments such as `--nocapture`.
    let mut tally = VertexTally::default();
    let mut results: Vec<(u32, &str, Outcome, Duration)> = Vec::new();
    let mut push = |id, name, (out, t): (Outcome, Duration)| {
        results.push((id, name, out, t));
    };
    push(
        1,
        "oracle chain suite",
        timed(Some(BUDGET_1), || chain_suite(&mut tally)),
    );
    push(
        2,
        "penalized bound",
        timed(Some(BUDGET_2), || penalized_suite(&mut tally)),
    );
    let ball = timed(Some(BUDGET_4), || ball_suite(&mut tally));
    let vertex = (
        if tally.violations.is_empty() {
            Ok(format!(
                "{} LP solves within the vertex bound",
                tally.solves
            ))
        } else {
            Err(format!(
                "{} of {} solves over the bound; first: {}",
                tally.violations.len(),
                tally.solves,
                tally.violations[0]
            ))
        },
        Duration::ZERO,
    );
    push(3, "vertex sparsity", vertex);
    push(4, "ball-family chain", ball);
    push(5, "strong-duality convergence", timed(None, strong_duality));
    push(6, "identity micro-suite", timed(Some(BUDGET_6), identities));
    push(
        7,
        "experiment 1 at full scale",
        timed(Some(BUDGET_7), experiment1),
    );
    push(
        8,
        "experiment 2 rank sweep",
        timed(Some(BUDGET_8), experiment2),
    );
    push(9, "determinism", timed(None, determinism));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (id, name, out, t) in &results {
        match out {
            Ok(detail) => println!("criterion {id} PASS  {name} [{t:.1?}]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} FAIL  {name} [{t:.1?}]: {detail}");
            }
        }
    }
    println!(
        "{} of {} acceptance criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

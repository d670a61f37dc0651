//! Subcommand implementations. Each returns whether every emitted
//! certificate held; hard failures come back as errors.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use sfsparse::certify::{certify_at_rank, CertifyOptions, ChainCheck, GapCertificate};
use sfsparse::experiment::{
    binary_labels, generate, run_sweep, standardize_columns, GenSpec, Preset, SweepGrid,
    SweepOptions, SweepRow, EXP3_X_PATH, EXP3_Y_PATH,
};
use sfsparse::io::{read_csv_matrix, read_csv_vector, write_csv_matrix, write_csv_vector};
use sfsparse::model::{Loss, ProblemInstance, RidgeForm, RidgeKind, SparsityBudget};
use sfsparse::oracle::{exact_solve, OracleResult};
use sfsparse::relax::SolverOptions;
use sfsparse::report::{write_sweep_csv_file, Report};

use crate::args::{DataArgs, GenArgs, OracleArgs, SolveArgs, SolverArgs, SweepArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Certified,
    Violated,
}

impl Outcome {
    fn from_ok(ok: bool) -> Self {
        if ok {
            Outcome::Certified
        } else {
            Outcome::Violated
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum DataSource {
    Files { x: PathBuf, y: PathBuf },
    Generator(GenSpec),
}

/// Everything that determines a run's results, echoed into the report.
#[derive(Debug, Clone, Serialize)]
struct RunConfig {
    data: DataSource,
    loss: Loss,
    standardized: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ridge: Option<RidgeForm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    budget: Option<SparsityBudget>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<SweepGrid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rank_approx: Option<usize>,
    seed: u64,
    trials: usize,
    tol: f64,
    max_sweeps: usize,
}

struct Data {
    x: DMatrix<f64>,
    y: DVector<f64>,
    source: DataSource,
}

fn load_files(x: &Path, y: &Path, loss: Loss) -> Result<Data> {
    let xm = read_csv_matrix(x)?;
    let mut yv = read_csv_vector(y)?;
    if yv.len() != xm.nrows() {
        bail!(
            "{} has {} rows but {} has {} entries",
            x.display(),
            xm.nrows(),
            y.display(),
            yv.len()
        );
    }
    if loss == Loss::Logistic {
        yv = binary_labels(&yv).with_context(|| y.display().to_string())?;
    }
    Ok(Data {
        x: xm,
        y: yv,
        source: DataSource::Files {
            x: x.to_path_buf(),
            y: y.to_path_buf(),
        },
    })
}

fn generated(spec: GenSpec) -> Result<Data> {
    let d = generate(&spec)?;
    Ok(Data {
        x: d.x,
        y: d.y,
        source: DataSource::Generator(spec),
    })
}

fn load(data: &DataArgs, seed: u64) -> Result<Data> {
    let loss = loss_of(data);
    match (&data.x, &data.y, &data.gen) {
        (Some(x), Some(y), None) => load_files(x, y, loss),
        (None, None, Some(spec)) => generated(GenSpec::parse(spec, loss, seed)?),
        _ => bail!("provide either --x and --y, or --gen"),
    }
}

fn loss_of(data: &DataArgs) -> Loss {
    data.loss.map(Loss::from).unwrap_or(Loss::Quadratic)
}

fn certify_options(s: &SolverArgs) -> Result<CertifyOptions> {
    if !(s.tol > 0.0 && s.tol.is_finite()) {
        bail!("--tol must be positive, got {}", s.tol);
    }
    if s.trials == 0 {
        bail!("--trials must be at least 1");
    }
    Ok(CertifyOptions {
        solver: SolverOptions {
            tol_obj: s.tol,
            max_sweeps: s.max_sweeps,
            initial_u: None,
        },
        trials: s.trials,
        user_rho: None,
    })
}

fn emit<T: Serialize>(report: &Report<T>, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => report.write(path)?,
        None => std::io::stdout()
            .write_all(report.to_json()?.as_bytes())
            .context("writing report")?,
    }
    Ok(())
}

fn budget_label(b: SparsityBudget) -> String {
    match b {
        SparsityBudget::Constrained(k) => format!("k = {k}"),
        SparsityBudget::Penalized(l) => format!("lambda = {l}"),
    }
}

fn summarize(cert: &GapCertificate) {
    eprintln!(
        "{} at {} (rank {})",
        cert.family.as_str(),
        budget_label(if cert.family.is_penalized() {
            SparsityBudget::Penalized(cert.k_or_lambda)
        } else {
            SparsityBudget::Constrained(cert.k_or_lambda as usize)
        }),
        cert.rank_used
    );
    eprintln!("  dual      {:.10}", cert.dual_value);
    eprintln!("  bidual    {:.10}", cert.bidual_value);
    eprintln!(
        "  OPT       {:.10}  ({} nonzeros)",
        cert.opt_value, cert.opt_card
    );
    eprintln!(
        "  bounds    [{:.10}, {:.10}]",
        cert.lower_bound, cert.upper_bound
    );
    if cert.zeta > 0.0 || cert.zeta_r > 0.0 {
        eprintln!("  zeta      {:.3e}   zeta_r {:.3e}", cert.zeta, cert.zeta_r);
    }
    if !cert.converged {
        eprintln!("  note: relaxation stopped at the sweep cap before reaching --tol");
    }
    report_violations(cert.violations());
}

fn report_violations<'a>(checks: impl Iterator<Item = &'a ChainCheck>) {
    for v in checks {
        eprintln!(
            "  VIOLATED  {}: {} > {} (residual {:.3e})",
            v.name, v.lhs, v.rhs, v.residual
        );
    }
}

pub fn solve(args: &SolveArgs) -> Result<Outcome> {
    let start = Instant::now();
    let opts = certify_options(&args.solver)?;
    let seed = args.solver.seed;
    let data = load(&args.data, seed)?;
    let loss = loss_of(&args.data);
    let config = RunConfig {
        data: data.source.clone(),
        loss,
        standardized: false,
        preset: None,
        ridge: Some(args.ridge),
        budget: Some(args.budget),
        grid: None,
        rank_approx: args.rank_approx,
        seed,
        trials: opts.trials,
        tol: opts.solver.tol_obj,
        max_sweeps: opts.solver.max_sweeps,
    };
    let inst = ProblemInstance::new(data.x, data.y, loss, args.ridge, args.budget)?;
    if let (Some(r), RidgeKind::Penalty) = (args.rank_approx, args.ridge.kind) {
        eprintln!("bounds below refer to the rank-{r} approximation of X");
    }
    let cert = certify_at_rank(&inst, args.rank_approx, seed, &opts)?;
    summarize(&cert);
    let ok = cert.chain_ok();
    let report =
        Report::new("solve", seed, &config, vec![cert])?.with_timing(start.elapsed().as_secs_f64());
    emit(&report, args.out.as_deref())?;
    Ok(Outcome::from_ok(ok))
}

fn exp3_missing_message() -> String {
    format!(
        "the exp3 preset needs the leukemia gene-expression data, which is not \
         distributed with this tool. Save the 72 x 3751 expression matrix (one \
         sample per row) as {EXP3_X_PATH} and the 72 class labels (0/1 or -1/+1, \
         one per line) as {EXP3_Y_PATH}, relative to the working directory, or \
         pass their locations with --x and --y"
    )
}

fn preset_data(preset: Preset, data: &DataArgs, seed: u64) -> Result<Data> {
    let loss = preset.loss();
    if let (Some(x), Some(y)) = (&data.x, &data.y) {
        return load_files(x, y, loss);
    }
    match preset.generator(seed) {
        Some(spec) => generated(spec),
        None => {
            let (x, y) = (Path::new(EXP3_X_PATH), Path::new(EXP3_Y_PATH));
            if !x.exists() || !y.exists() {
                bail!(exp3_missing_message());
            }
            load_files(x, y, loss)
        }
    }
}

fn csv_path(args: &SweepArgs) -> Option<PathBuf> {
    args.csv
        .clone()
        .or_else(|| args.out.as_ref().map(|p| p.with_extension("csv")))
}

pub fn sweep(args: &SweepArgs) -> Result<Outcome> {
    let start = Instant::now();
    let opts = certify_options(&args.solver)?;
    let seed = args.solver.seed;
    let (inst, grid, config) = match &args.preset {
        Some(name) => {
            let preset: Preset = name.parse()?;
            if args.budget.is_some() || args.rank_approx.is_some() {
                bail!("--budget and --rank-approx cannot be combined with --preset");
            }
            let mut data = preset_data(preset, &args.data, seed)?;
            if preset.standardize() {
                standardize_columns(&mut data.x);
            }
            let (inst, grid) = preset.instance(data.x, data.y)?;
            let config = RunConfig {
                data: data.source,
                loss: inst.loss,
                standardized: preset.standardize(),
                preset: Some(preset.name().to_string()),
                ridge: Some(inst.ridge),
                budget: None,
                grid: Some(grid.clone()),
                rank_approx: None,
                seed,
                trials: opts.trials,
                tol: opts.solver.tol_obj,
                max_sweeps: opts.solver.max_sweeps,
            };
            (inst, grid, config)
        }
        None => {
            let grid = args
                .grid
                .clone()
                .ok_or_else(|| anyhow!("give --grid or --preset"))?;
            let ridge = args.ridge.ok_or_else(|| anyhow!("--ridge is required"))?;
            let budget = match (&grid, args.budget) {
                (_, Some(b)) => b,
                (SweepGrid::Lambda { values }, None) => SparsityBudget::Penalized(values[0]),
                (SweepGrid::K { values }, None) => SparsityBudget::Constrained(values[0]),
                (SweepGrid::Rank { .. }, None) => bail!("rank grids need --budget"),
            };
            if matches!(grid, SweepGrid::Rank { .. }) && args.rank_approx.is_some() {
                bail!("--rank-approx does not apply to rank grids");
            }
            let data = load(&args.data, seed)?;
            let loss = loss_of(&args.data);
            let config = RunConfig {
                data: data.source.clone(),
                loss,
                standardized: false,
                preset: None,
                ridge: Some(ridge),
                budget: Some(budget),
                grid: Some(grid.clone()),
                rank_approx: args.rank_approx,
                seed,
                trials: opts.trials,
                tol: opts.solver.tol_obj,
                max_sweeps: opts.solver.max_sweeps,
            };
            let inst = ProblemInstance::new(data.x, data.y, loss, ridge, budget)?;
            (inst, grid, config)
        }
    };
    let rows = run_sweep(
        &inst,
        &grid,
        seed,
        &SweepOptions {
            certify: opts,
            rank_approx: config.rank_approx,
            workers: args.workers,
        },
    )?;
    let violated: Vec<&SweepRow> = rows.iter().filter(|r| !r.certificate.chain_ok()).collect();
    eprintln!(
        "{} grid points, {} with violated bounds",
        rows.len(),
        violated.len()
    );
    for row in &violated {
        eprintln!("point {}:", row.index);
        report_violations(row.certificate.violations());
    }
    let ok = violated.is_empty();
    if let Some(path) = csv_path(args) {
        if args.out.as_deref() == Some(path.as_path()) {
            bail!(
                "the report and the table would both go to {}",
                path.display()
            );
        }
        write_sweep_csv_file(&path, &rows)?;
    }
    let report =
        Report::new("sweep", seed, &config, rows)?.with_timing(start.elapsed().as_secs_f64());
    emit(&report, args.out.as_deref())?;
    Ok(Outcome::from_ok(ok))
}

#[derive(Debug, Clone, Serialize)]
struct CrossCheck {
    bidual: f64,
    opt: f64,
    opt_card: usize,
    rank_used: usize,
    /// Exact value at the widened budget `min(m, k + r + 2)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    exact_wide: Option<f64>,
    checks: Vec<ChainCheck>,
}

#[derive(Debug, Clone, Serialize)]
struct OracleRecord {
    seed: u64,
    #[serde(flatten)]
    exact: OracleResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    cross_check: Option<CrossCheck>,
}

fn cross_check(
    inst: &ProblemInstance,
    exact: f64,
    cap: u128,
    seed: u64,
    opts: &CertifyOptions,
) -> Result<CrossCheck> {
    let cert = certify_at_rank(inst, None, seed, opts)?;
    let mut checks = cert.chain.clone();
    checks.push(ChainCheck::new(
        "bidual <= exact",
        cert.bidual_value,
        exact,
        0.0,
    ));
    let mut exact_wide = None;
    match inst.budget {
        SparsityBudget::Constrained(k) => {
            let wide = (k + cert.rank_used + 2).min(inst.m());
            let p_wide = exact_solve(&inst.with_budget(SparsityBudget::Constrained(wide))?, cap)?;
            checks.push(ChainCheck::new(
                "exact(k+r+2) <= OPT",
                p_wide.value,
                cert.opt_value,
                0.0,
            ));
            exact_wide = Some(p_wide.value);
        }
        SparsityBudget::Penalized(_) => {
            checks.push(ChainCheck::new("exact <= OPT", exact, cert.opt_value, 0.0));
        }
    }
    Ok(CrossCheck {
        bidual: cert.bidual_value,
        opt: cert.opt_value,
        opt_card: cert.opt_card,
        rank_used: cert.rank_used,
        exact_wide,
        checks,
    })
}

pub fn oracle(args: &OracleArgs) -> Result<Outcome> {
    let start = Instant::now();
    let opts = certify_options(&args.solver)?;
    let loss = loss_of(&args.data);
    let mut records = Vec::new();
    let mut sources = Vec::new();
    let mut ok = true;
    for i in 0..args.repeat {
        let seed = args.solver.seed + i;
        let data = load(&args.data, seed)?;
        sources.push(data.source.clone());
        let inst = ProblemInstance::new(data.x, data.y, loss, args.ridge, args.budget)?;
        let exact = exact_solve(&inst, args.cap)?;
        println!(
            "seed {seed}: exact value {:.12} on support {:?} ({} subproblems)",
            exact.value, exact.support, exact.subproblems_solved
        );
        let check = if args.cross_check {
            let c = cross_check(&inst, exact.value, args.cap, seed, &opts)?;
            let bad: Vec<&ChainCheck> = c.checks.iter().filter(|c| !c.ok).collect();
            if bad.is_empty() {
                println!(
                    "  all {} checks hold (bidual {:.12}, OPT {:.12})",
                    c.checks.len(),
                    c.bidual,
                    c.opt
                );
            } else {
                ok = false;
                report_violations(bad.into_iter());
            }
            Some(c)
        } else {
            None
        };
        records.push(OracleRecord {
            seed,
            exact,
            cross_check: check,
        });
    }
    #[derive(Serialize)]
    struct OracleConfig {
        data: Vec<DataSource>,
        loss: Loss,
        ridge: RidgeForm,
        budget: SparsityBudget,
        cap: String,
        cross_check: bool,
        trials: usize,
        tol: f64,
    }
    let config = OracleConfig {
        data: sources,
        loss,
        ridge: args.ridge,
        budget: args.budget,
        cap: args.cap.to_string(),
        cross_check: args.cross_check,
        trials: opts.trials,
        tol: opts.solver.tol_obj,
    };
    if let Some(path) = &args.out {
        Report::new("oracle", args.solver.seed, &config, records)?
            .with_timing(start.elapsed().as_secs_f64())
            .write(path)?;
    }
    Ok(Outcome::from_ok(ok))
}

pub fn gen(args: &GenArgs) -> Result<Outcome> {
    let spec = GenSpec::parse(&args.gen, args.loss.into(), args.seed)?;
    let d = generate(&spec)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_csv_matrix(args.out.join("x.csv"), &d.x)?;
    write_csv_vector(args.out.join("y.csv"), &d.y)?;
    write_csv_vector(args.out.join("beta.csv"), &d.beta)?;
    eprintln!(
        "wrote {} x {} design, responses and coefficients to {}",
        spec.n,
        spec.m,
        args.out.display()
    );
    Ok(Outcome::Certified)
}

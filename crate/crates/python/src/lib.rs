//! Python bindings for `sfsparse`.
//!
//! Matrices cross the boundary as lists of rows (any sequence of sequences of
//! floats, including 2-D numpy arrays); ridge forms and budgets use the same
//! text forms as the command-line tool (`"ball:30"`, `"k:5"`, `"lambda:1e-3"`).

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sfsparse::certify::{
    certify_at_rank, full_rank_bounds_with, CertifyOptions, ChainCheck, GapCertificate,
};
use sfsparse::error::Error;
use sfsparse::experiment::{self, GenSpec, SweepGrid, SweepOptions};
use sfsparse::model::{primal_objective, Loss, ProblemInstance, RidgeForm, SparsityBudget};
use sfsparse::oracle::{self, DEFAULT_CAP};
use sfsparse::relax::{solve_bidual, RelaxedSolution, SolverOptions};
use sfsparse::spectra::{self, compact_svd};

/// Relative cutoff below which singular values count as zero when no
/// rank is requested.
const EXACT_RANK_RTOL: f64 = 1e-13;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(text: &str) -> PyResult<T> {
    text.parse().map_err(py_err)
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != m) {
        return Err(PyValueError::new_err(format!(
            "row {i} has {} entries, expected {m}",
            rows[i].len()
        )));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// `(x, y, beta)` as returned by [`generate`].
type Dataset = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>);

fn to_rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn solver_options(tol: f64, max_sweeps: usize) -> SolverOptions {
    SolverOptions {
        tol_obj: tol,
        max_sweeps,
        ..SolverOptions::default()
    }
}

fn certify_options(trials: usize, tol: f64, max_sweeps: usize) -> CertifyOptions {
    CertifyOptions {
        solver: solver_options(tol, max_sweeps),
        trials,
        ..CertifyOptions::default()
    }
}

/// A sparse regression problem: design matrix, response, loss, ridge form
/// and sparsity budget.
#[pyclass(frozen, name = "Instance", module = "sfsparse")]
struct PyInstance {
    inner: ProblemInstance,
}

#[pymethods]
impl PyInstance {
    #[new]
    #[pyo3(signature = (x, y, ridge, budget, loss = "quadratic"))]
    fn new(x: Vec<Vec<f64>>, y: Vec<f64>, ridge: &str, budget: &str, loss: &str) -> PyResult<Self> {
        let inner = ProblemInstance::new(
            to_matrix(&x)?,
            DVector::from_vec(y),
            parse::<Loss>(loss)?,
            parse::<RidgeForm>(ridge)?,
            parse::<SparsityBudget>(budget)?,
        )
        .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.x_matrix)
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y.as_slice().to_vec()
    }

    #[getter]
    fn loss(&self) -> String {
        self.inner.loss.to_string()
    }

    #[getter]
    fn ridge(&self) -> String {
        self.inner.ridge.to_string()
    }

    #[getter]
    fn budget(&self) -> String {
        self.inner.budget.to_string()
    }

    /// `constrained-penalty`, `penalized-penalty`, `constrained-ball` or
    /// `penalized-ball`.
    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family().as_str()
    }

    /// Objective at `w` and whether `w` lies in the ridge ball (always true
    /// for penalty ridges). Cardinality limits are not checked.
    fn objective(&self, w: Vec<f64>) -> PyResult<(f64, bool)> {
        let v = primal_objective(&self.inner, &w).map_err(py_err)?;
        Ok((v.value, v.ball_feasible))
    }

    fn with_budget(&self, budget: &str) -> PyResult<Self> {
        let inner = self
            .inner
            .with_budget(parse::<SparsityBudget>(budget)?)
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(n={}, m={}, loss={}, ridge={}, budget={})",
            self.inner.n(),
            self.inner.m(),
            self.inner.loss,
            self.inner.ridge,
            self.inner.budget
        )
    }
}

/// Solution of the convex relaxation.
#[pyclass(frozen, name = "Relaxation", module = "sfsparse")]
struct PyRelaxation {
    inner: RelaxedSolution,
}

#[pymethods]
impl PyRelaxation {
    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family.as_str()
    }

    /// Relaxed support indicator in `[0, 1]^m`.
    #[getter]
    fn u(&self) -> Vec<f64> {
        self.inner.u.clone()
    }

    #[getter]
    fn v(&self) -> Vec<f64> {
        self.inner.v.clone()
    }

    /// Relaxed optimal value.
    #[getter]
    fn value(&self) -> f64 {
        self.inner.t_star
    }

    #[getter]
    fn dual_value(&self) -> f64 {
        self.inner.dual_value
    }

    #[getter]
    fn gap(&self) -> f64 {
        self.inner.gap()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Certified bounds on the optimal value together with the primalized point.
#[pyclass(frozen, name = "Certificate", module = "sfsparse")]
struct PyCertificate {
    inner: GapCertificate,
}

fn check_dict<'py>(py: Python<'py>, c: &ChainCheck) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("name", &c.name)?;
    d.set_item("lhs", c.lhs)?;
    d.set_item("rhs", c.rhs)?;
    d.set_item("residual", c.residual)?;
    d.set_item("tol", c.tol)?;
    d.set_item("ok", c.ok)?;
    Ok(d)
}

#[pymethods]
impl PyCertificate {
    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family.as_str()
    }

    #[getter]
    fn k_or_lambda(&self) -> f64 {
        self.inner.k_or_lambda
    }

    #[getter]
    fn rank_used(&self) -> usize {
        self.inner.rank_used
    }

    #[getter]
    fn bidual_value(&self) -> f64 {
        self.inner.bidual_value
    }

    #[getter]
    fn dual_value(&self) -> f64 {
        self.inner.dual_value
    }

    /// Objective of the primalized point.
    #[getter]
    fn opt_value(&self) -> f64 {
        self.inner.opt_value
    }

    #[getter]
    fn opt_card(&self) -> usize {
        self.inner.opt_card
    }

    /// The primalized point.
    #[getter]
    fn w(&self) -> Vec<f64> {
        self.inner.w.clone()
    }

    #[getter]
    fn lower_bound(&self) -> f64 {
        self.inner.lower_bound
    }

    #[getter]
    fn upper_bound(&self) -> f64 {
        self.inner.upper_bound
    }

    #[getter]
    fn gap(&self) -> f64 {
        self.inner.gap()
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho
    }

    #[getter]
    fn zeta(&self) -> f64 {
        self.inner.zeta
    }

    #[getter]
    fn zeta_r(&self) -> f64 {
        self.inner.zeta_r
    }

    #[getter]
    fn slack_used(&self) -> f64 {
        self.inner.slack_used
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn dispersion(&self) -> f64 {
        self.inner.dispersion
    }

    #[getter]
    fn opt_std(&self) -> f64 {
        self.inner.opt_std
    }

    #[getter]
    fn trials(&self) -> usize {
        self.inner.trials
    }

    #[getter]
    fn surrogates(&self) -> Vec<String> {
        self.inner.surrogates.clone()
    }

    /// Each inequality of the chain as a dict with `name`, `lhs`, `rhs`,
    /// `residual`, `tol` and `ok`.
    #[getter]
    fn chain<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner.chain.iter().map(|c| check_dict(py, c)).collect()
    }

    #[getter]
    fn chain_ok(&self) -> bool {
        self.inner.chain_ok()
    }

    /// Names of the violated inequalities.
    #[getter]
    fn violations(&self) -> Vec<String> {
        self.inner.violations().map(|c| c.name.clone()).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Certificate(family={}, lower={}, upper={}, chain_ok={})",
            self.inner.family.as_str(),
            self.inner.lower_bound,
            self.inner.upper_bound,
            self.inner.chain_ok()
        )
    }
}

/// Synthetic dataset; `spec` takes `key=value` fields (`n`, `m`, `rank`,
/// `sparsity`, `std`, `noise`, `spectrum`). Returns `(x, y, beta)`.
#[pyfunction]
#[pyo3(signature = (spec = "", loss = "quadratic", seed = 0))]
fn generate(spec: &str, loss: &str, seed: u64) -> PyResult<Dataset> {
    let spec = GenSpec::parse(spec, parse::<Loss>(loss)?, seed).map_err(py_err)?;
    let d = experiment::generate(&spec).map_err(py_err)?;
    Ok((
        to_rows(&d.x),
        d.y.as_slice().to_vec(),
        d.beta.as_slice().to_vec(),
    ))
}

/// Solve the convex relaxation, on the rank-`rank` truncation when given.
#[pyfunction]
#[pyo3(signature = (instance, rank = None, tol = 1e-7, max_sweeps = 10_000))]
fn relax(
    py: Python<'_>,
    instance: &PyInstance,
    rank: Option<usize>,
    tol: f64,
    max_sweeps: usize,
) -> PyResult<PyRelaxation> {
    let inst = &instance.inner;
    let opts = solver_options(tol, max_sweeps);
    let inner = py
        .detach(|| {
            let svd = match rank {
                Some(r) => compact_svd(&inst.x_matrix, Some(r), None)?,
                None => compact_svd(&inst.x_matrix, None, Some(EXACT_RANK_RTOL))?,
            };
            solve_bidual(inst, &svd, &opts)
        })
        .map_err(py_err)?;
    Ok(PyRelaxation { inner })
}

/// Relax, primalize and certify. With `rank`, ball ridges are certified
/// against the full matrix through its rank-`rank` truncation and penalty
/// ridges on the truncation itself.
#[pyfunction]
#[pyo3(signature = (instance, rank = None, seed = 0, trials = 20, tol = 1e-7, max_sweeps = 10_000))]
fn certify(
    py: Python<'_>,
    instance: &PyInstance,
    rank: Option<usize>,
    seed: u64,
    trials: usize,
    tol: f64,
    max_sweeps: usize,
) -> PyResult<PyCertificate> {
    let opts = certify_options(trials, tol, max_sweeps);
    let inner = py
        .detach(|| certify_at_rank(&instance.inner, rank, seed, &opts))
        .map_err(py_err)?;
    Ok(PyCertificate { inner })
}

/// Bounds for a ball-ridge instance computed from its rank-`rank`
/// truncation, paying for the truncation error.
#[pyfunction]
#[pyo3(signature = (instance, rank, seed = 0, trials = 20, tol = 1e-7, max_sweeps = 10_000))]
fn full_rank_bounds(
    py: Python<'_>,
    instance: &PyInstance,
    rank: usize,
    seed: u64,
    trials: usize,
    tol: f64,
    max_sweeps: usize,
) -> PyResult<PyCertificate> {
    let opts = certify_options(trials, tol, max_sweeps);
    let inner = py
        .detach(|| full_rank_bounds_with(&instance.inner, rank, seed, &opts))
        .map_err(py_err)?;
    Ok(PyCertificate { inner })
}

/// Exact optimum by support enumeration; refuses more than `cap` supports.
/// Returns a dict with `value`, `w`, `support` and `subproblems_solved`.
#[pyfunction]
#[pyo3(signature = (instance, cap = DEFAULT_CAP))]
fn exact_solve<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    cap: u128,
) -> PyResult<Bound<'py, PyDict>> {
    let r = py
        .detach(|| oracle::exact_solve(&instance.inner, cap))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("value", r.value)?;
    d.set_item("w", r.w)?;
    d.set_item("support", r.support)?;
    d.set_item("subproblems_solved", r.subproblems_solved)?;
    Ok(d)
}

/// Certify every point of a grid (`"k:1-5"`, `"lambda:1e-3,1e-2"` or
/// `"rank:1-20"`). Rank grids use the instance's own budget. Returns one
/// dict per point with `index`, `budget`, `rank_approx`, `p_x` and
/// `certificate`.
#[pyfunction]
#[pyo3(signature = (instance, grid, seed = 0, trials = 20, rank_approx = None, workers = 0))]
fn sweep<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    grid: &str,
    seed: u64,
    trials: usize,
    rank_approx: Option<usize>,
    workers: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let grid = parse::<SweepGrid>(grid)?;
    let opts = SweepOptions {
        certify: CertifyOptions {
            trials,
            ..CertifyOptions::default()
        },
        rank_approx,
        workers,
    };
    let rows = py
        .detach(|| experiment::run_sweep(&instance.inner, &grid, seed, &opts))
        .map_err(py_err)?;
    rows.into_iter()
        .map(|row| {
            let d = PyDict::new(py);
            d.set_item("index", row.index)?;
            d.set_item("budget", row.budget.to_string())?;
            d.set_item("rank_approx", row.rank_approx)?;
            d.set_item("p_x", row.p_x)?;
            d.set_item(
                "certificate",
                Py::new(
                    py,
                    PyCertificate {
                        inner: row.certificate,
                    },
                )?,
            )?;
            Ok(d)
        })
        .collect()
}

/// Columns centred and scaled to unit population variance; constant
/// columns are only centred.
#[pyfunction]
fn standardize_columns(x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let mut xm = to_matrix(&x)?;
    experiment::standardize_columns(&mut xm);
    Ok(to_rows(&xm))
}

/// Singular values in decreasing order.
#[pyfunction]
fn singular_values(x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(spectra::singular_values(&to_matrix(&x)?)
        .as_slice()
        .to_vec())
}

/// Number of singular values above `tau`.
#[pyfunction]
fn numerical_rank(x: Vec<Vec<f64>>, tau: f64) -> PyResult<usize> {
    spectra::numerical_rank(&to_matrix(&x)?, tau).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "sfsparse")]
fn sfsparse_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyInstance>()?;
    m.add_class::<PyRelaxation>()?;
    m.add_class::<PyCertificate>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(relax, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(full_rank_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(exact_solve, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(standardize_columns, m)?)?;
    m.add_function(wrap_pyfunction!(singular_values, m)?)?;
    m.add_function(wrap_pyfunction!(numerical_rank, m)?)?;
    Ok(())
}

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sop_core::convex_oracle::{self, ConvexSolution};
use sop_core::csv_io::{read_instance, write_instance};
use sop_core::experiments::{cmd_classify, ClassifyConfig, MethodSummary, NoiseType};
use sop_core::instances::{gen_linear_instance, LinearInstance};
use sop_core::landscape;
use sop_core::numerics::{DenseMatrix, SeededRng};
use sop_core::recovery_theory::recovery_certificate;
use sop_core::sop_linear::{self, GdConfig, DEFAULT_GAMMA};
use sop_core::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::DimensionMismatch(_)
        | Error::EmptyMatrix
        | Error::ZeroMatrix
        | Error::NonFinite(_)
        | Error::RangeViolation { .. }
        | Error::InvalidParameter(_)
        | Error::IndexOutOfRange { .. }
        | Error::Parse(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for sop_core::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

/// A corrupted linear system `y = Jθ⋆ + s⋆` with low-rank `J` and sparse `s⋆`.
#[pyclass(name = "LinearInstance", module = "sop_py")]
struct PyLinearInstance {
    inner: LinearInstance,
}

#[pymethods]
impl PyLinearInstance {
    #[staticmethod]
    #[pyo3(signature = (n, p, rank, sparsity, seed = 0))]
    fn generate(n: usize, p: usize, rank: usize, sparsity: usize, seed: u64) -> PyResult<Self> {
        let inner = gen_linear_instance(n, p, rank, sparsity, &mut SeededRng::new(seed)).py_err()?;
        Ok(Self { inner })
    }

    /// Reads the four `<base>.*.csv` files.
    #[staticmethod]
    fn load(base: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: read_instance(&base).py_err()? })
    }

    fn save(&self, base: PathBuf) -> PyResult<()> {
        write_instance(&self.inner, &base).py_err()
    }

    #[getter]
    fn j(&self) -> Vec<Vec<f64>> {
        (0..self.inner.j.rows()).map(|i| self.inner.j.row(i).to_vec()).collect()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y.clone()
    }

    #[getter]
    fn theta_star(&self) -> Vec<f64> {
        self.inner.theta_star.clone()
    }

    #[getter]
    fn s_star(&self) -> Vec<f64> {
        self.inner.s_star.clone()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank
    }

    #[getter]
    fn sparsity(&self) -> usize {
        self.inner.sparsity
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn support(&self) -> Vec<usize> {
        self.inner.support()
    }

    fn __repr__(&self) -> String {
        format!(
            "LinearInstance(n={}, p={}, rank={}, sparsity={}, seed={})",
            self.inner.n(),
            self.inner.p(),
            self.inner.rank,
            self.inner.sparsity,
            self.inner.seed
        )
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DenseMatrix> {
    DenseMatrix::from_rows(&rows).py_err()
}

/// Gradient descent from the small initialization; returns the final iterate.
#[pyfunction]
#[pyo3(signature = (instance, alpha, gamma = DEFAULT_GAMMA, tau = None, max_iters = None))]
fn run_gd<'py>(
    py: Python<'py>,
    instance: &PyLinearInstance,
    alpha: f64,
    gamma: f64,
    tau: Option<f64>,
    max_iters: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let inst = &instance.inner;
    let mut cfg = GdConfig::for_matrix(&inst.j, gamma, alpha).py_err()?;
    if let Some(tau) = tau {
        cfg.tau = tau;
    }
    if let Some(max_iters) = max_iters {
        cfg.max_iters = max_iters;
    }
    let out = py.detach(|| sop_linear::run_gd(&inst.j, &inst.y, &cfg)).py_err()?;
    let d = PyDict::new(py);
    d.set_item("theta", &out.state.theta)?;
    d.set_item("u", &out.state.u)?;
    d.set_item("v", &out.state.v)?;
    d.set_item("s", out.state.s())?;
    d.set_item("objective", out.state.objective)?;
    d.set_item("iterations", out.state.iter)?;
    d.set_item("status", out.status.as_str())?;
    d.set_item("tau", out.tau)?;
    Ok(d)
}

fn solution_dict<'py>(py: Python<'py>, sol: &ConvexSolution) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("theta", &sol.theta)?;
    d.set_item("s", &sol.s)?;
    d.set_item("nu", &sol.nu)?;
    d.set_item("lambda", sol.lambda)?;
    d.set_item("objective", sol.objective())?;
    d.set_item("kkt_residual", sol.kkt_residual)?;
    d.set_item("feasibility_residual", sol.feasibility_residual)?;
    d.set_item("iterations", sol.iterations)?;
    d.set_item("status", sol.status.as_str())?;
    Ok(d)
}

/// `min ½‖θ‖² + λ‖s‖₁` subject to `y = Jθ + s`.
#[pyfunction]
#[pyo3(signature = (instance, lam, tol = convex_oracle::DEFAULT_TOL, max_iters = convex_oracle::DEFAULT_MAX_ITERS))]
fn solve_convex<'py>(
    py: Python<'py>,
    instance: &PyLinearInstance,
    lam: f64,
    tol: f64,
    max_iters: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let inst = &instance.inner;
    let sol = py
        .detach(|| convex_oracle::solve_convex(&inst.j, &inst.y, lam, tol, max_iters))
        .py_err()?;
    solution_dict(py, &sol)
}

#[pyfunction]
#[pyo3(signature = (j, theta, u, v, y, tol = landscape::DEFAULT_CRITICAL_TOL))]
fn classify_critical_point<'py>(
    py: Python<'py>,
    j: Vec<Vec<f64>>,
    theta: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    y: Vec<f64>,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let j = matrix(j)?;
    let rep = landscape::classify_critical_point(&j, &theta, &u, &v, &y, tol).py_err()?;
    let d = PyDict::new(py);
    d.set_item("grad_norm", rep.grad_norm)?;
    d.set_item("classification", rep.classification.as_str())?;
    d.set_item("witness_index", rep.witness_index)?;
    d.set_item("curvature_value", rep.curvature_value)?;
    Ok(d)
}

#[pyfunction]
fn objective(j: Vec<Vec<f64>>, theta: Vec<f64>, u: Vec<f64>, v: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    sop_linear::objective(&matrix(j)?, &theta, &u, &v, &y).py_err()
}

#[pyfunction]
fn lambda_zero(instance: &PyLinearInstance, rho: f64) -> PyResult<f64> {
    convex_oracle::lambda_zero(&instance.inner.j, &instance.inner.theta_star, rho).py_err()
}

#[pyfunction]
fn alpha_from_lambda(gamma: f64, lam: f64) -> PyResult<f64> {
    convex_oracle::alpha_from_lambda(gamma, lam).py_err()
}

#[pyfunction]
fn lambda_from_alpha(gamma: f64, alpha: f64) -> PyResult<f64> {
    convex_oracle::lambda_from_alpha(gamma, alpha).py_err()
}

/// Coherence, incoherence check and the derived `ρ` and `λ₀` for an instance.
#[pyfunction]
fn certificate<'py>(py: Python<'py>, instance: &PyLinearInstance) -> PyResult<Bound<'py, PyDict>> {
    let inst = &instance.inner;
    let c = recovery_certificate(&inst.j, inst.sparsity, Some(&inst.theta_star)).py_err()?;
    let d = PyDict::new(py);
    d.set_item("mu", c.mu)?;
    d.set_item("incoherence_ok", c.incoherence_ok)?;
    d.set_item("rho_bound", c.rho_bound)?;
    d.set_item("nsp_sampled", c.nsp_sampled)?;
    d.set_item("lambda_zero", c.lambda_zero)?;
    Ok(d)
}

fn summary_dict<'py>(py: Python<'py>, m: &MethodSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("final_test_acc", m.final_test_acc)?;
    d.set_item("final_train_acc_noisy", m.final_train_acc_noisy)?;
    d.set_item("noise_precision", m.noise_precision)?;
    d.set_item("noise_recall", m.noise_recall)?;
    d.set_item("status", &m.status)?;
    let test_acc: Vec<f64> = m.history.epochs.iter().map(|e| e.test_acc).collect();
    d.set_item("test_acc_history", test_acc)?;
    Ok(d)
}

/// Trains the noise-absorbing classifier and the plain cross-entropy baseline
/// on synthetic Gaussian blobs; returns `{"sop": ..., "ce": ...}`.
#[pyfunction]
#[pyo3(signature = (noise_rate = 0.4, noise_type = "symmetric", epochs = None, hidden = None, seed = 0))]
fn classify<'py>(
    py: Python<'py>,
    noise_rate: f64,
    noise_type: &str,
    epochs: Option<usize>,
    hidden: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = ClassifyConfig {
        noise_rate,
        noise_type: noise_type.parse::<NoiseType>().py_err()?,
        seed,
        ..ClassifyConfig::default()
    };
    cfg.hyper.seed = seed;
    if let Some(epochs) = epochs {
        cfg.hyper.epochs = epochs;
    }
    if let Some(hidden) = hidden {
        cfg.hyper.hidden = hidden;
    }
    let out = py.detach(|| cmd_classify(&cfg)).py_err()?;
    let d = PyDict::new(py);
    d.set_item("sop", summary_dict(py, &out.sop)?)?;
    d.set_item("ce", summary_dict(py, &out.baseline)?)?;
    Ok(d)
}

#[pymodule]
fn sop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLinearInstance>()?;
    m.add_function(wrap_pyfunction!(run_gd, m)?)?;
    m.add_function(wrap_pyfunction!(solve_convex, m)?)?;
    m.add_function(wrap_pyfunction!(classify_critical_point, m)?)?;
    m.add_function(wrap_pyfunction!(objective, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_zero, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_from_lambda, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_from_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(certificate, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add("DEFAULT_GAMMA", DEFAULT_GAMMA)?;
    Ok(())
}

//! Python bindings. Matrices cross the boundary as lists of rows, enums as
//! their snake_case names (`"ridge"`, `"taylor_amp"`, `"laplace"`, ...).

use conformal_amp::amp::{self, AmpOptions};
use conformal_amp::bayes::{self, BayesConfig};
use conformal_amp::conformal::{self, Backend, ConformalConfig, GridChoice, LabelGrid};
use conformal_amp::data::{self, Dataset, SplitSpec, SyntheticConfig, TeacherPrior};
use conformal_amp::exact;
use conformal_amp::experiment::{self, ExperimentConfig, ExperimentKind};
use conformal_amp::glm::{GlmSpec, Regularizer};
use conformal_amp::Error;
use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::InvalidConfig(_)
        | Error::InvalidData(_)
        | Error::Domain { .. }
        | Error::IndexOutOfRange { .. }
        | Error::Parse { .. }
        | Error::MissingColumn(_)
        | Error::Empty(_)
        | Error::TooLarge { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn named<T: serde::de::DeserializeOwned>(what: &str, name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_owned()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {name:?}")))
}

fn dataset(x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Dataset> {
    let d = x.first().map_or(0, Vec::len);
    if x.iter().any(|row| row.len() != d) {
        return Err(PyValueError::new_err("rows of x must all have the same length"));
    }
    let x = Array2::from_shape_vec((x.len(), d), x.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Dataset::new(x, Array1::from(y)).map_err(to_py)
}

fn rows(x: ndarray::ArrayView2<f64>) -> Vec<Vec<f64>> {
    x.outer_iter().map(|r| r.to_vec()).collect()
}

/// Squared loss with a Ridge or Lasso penalty of strength `lam`.
#[pyclass(name = "Glm", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyGlm(GlmSpec);

#[pymethods]
impl PyGlm {
    #[new]
    fn new(regularizer: &str, lam: f64) -> PyResult<Self> {
        let spec = GlmSpec { regularizer: named::<Regularizer>("regularizer", regularizer)?, lambda: lam };
        spec.validate().map_err(to_py)?;
        Ok(Self(spec))
    }

    #[staticmethod]
    fn ridge(lam: f64) -> PyResult<Self> {
        Self::new("ridge", lam)
    }

    #[staticmethod]
    fn lasso(lam: f64) -> PyResult<Self> {
        Self::new("lasso", lam)
    }

    #[getter]
    fn regularizer(&self) -> &'static str {
        match self.0.regularizer {
            Regularizer::Ridge => "ridge",
            Regularizer::Lasso => "lasso",
        }
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.0.lambda
    }

    fn __repr__(&self) -> String {
        format!("Glm({:?}, {})", self.regularizer(), self.0.lambda)
    }
}

/// A prediction set: a union of closed intervals.
#[pyclass(name = "PredictionSet", frozen, from_py_object)]
#[derive(Clone)]
struct PySet(conformal::PredictionSet);

#[pymethods]
impl PySet {
    #[getter]
    fn intervals(&self) -> Vec<(f64, f64)> {
        self.0.intervals.clone()
    }

    /// Grid inclusion mask; empty for interval-only sets.
    #[getter]
    fn included(&self) -> Vec<bool> {
        self.0.included.clone()
    }

    fn length(&self) -> f64 {
        self.0.length()
    }

    fn contains(&self, y: f64) -> bool {
        self.0.contains(y)
    }

    fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn touches_grid_boundary(&self) -> bool {
        self.0.touches_grid_boundary()
    }

    fn __repr__(&self) -> String {
        format!("PredictionSet({:?})", self.0.intervals)
    }
}

#[pyclass(name = "AmpResult", frozen, get_all)]
struct PyAmp {
    theta_hat: Vec<f64>,
    v_hat: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn amp_options(tol: f64, max_iter: usize, damping: f64) -> AmpOptions {
    AmpOptions { tol, max_iter, damping, ..AmpOptions::default() }
}

/// Teacher-student data; returns `(x, y, teacher)`.
#[pyfunction]
#[pyo3(signature = (n, d, prior = "gaussian", noise_variance = 1.0, seed = 0))]
fn generate_synthetic(
    n: usize,
    d: usize,
    prior: &str,
    noise_variance: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    let teacher_prior = named::<TeacherPrior>("prior", prior)?;
    let (ds, teacher) =
        data::generate_synthetic(&SyntheticConfig { n, d, teacher_prior, noise_variance, seed }).map_err(to_py)?;
    Ok((rows(ds.x()), ds.y().to_vec(), teacher.to_vec()))
}

/// Standardized features and target from a CSV file.
#[pyfunction]
fn load_csv(path: &str, target_column: &str) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let ds = data::load_csv(path, target_column).map_err(to_py)?;
    Ok((rows(ds.x()), ds.y().to_vec()))
}

#[pyfunction]
#[pyo3(signature = (x, y, glm, tol = exact::DEFAULT_TOL, max_iter = exact::DEFAULT_MAX_ITER))]
fn erm_solve(x: Vec<Vec<f64>>, y: Vec<f64>, glm: PyGlm, tol: f64, max_iter: usize) -> PyResult<Vec<f64>> {
    let ds = dataset(x, y)?;
    Ok(exact::erm_solve(&ds, &glm.0, tol, max_iter).map_err(to_py)?.theta.to_vec())
}

#[pyfunction]
#[pyo3(signature = (x, y, glm, tol = 1e-10, max_iter = 1000, damping = 0.0))]
fn amp_fit(x: Vec<Vec<f64>>, y: Vec<f64>, glm: PyGlm, tol: f64, max_iter: usize, damping: f64) -> PyResult<PyAmp> {
    let ds = dataset(x, y)?;
    let st = amp::amp_fit(&ds, &glm.0, &amp_options(tol, max_iter, damping)).map_err(to_py)?;
    Ok(PyAmp {
        theta_hat: st.theta_hat.to_vec(),
        v_hat: st.v_hat.to_vec(),
        iterations: st.iterations,
        converged: st.converged,
    })
}

/// Leave-one-out predictions of every row from a single AMP fit.
#[pyfunction]
#[pyo3(signature = (x, y, glm, tol = 1e-10, max_iter = 1000, damping = 0.0))]
fn amp_loo_predictions(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    glm: PyGlm,
    tol: f64,
    max_iter: usize,
    damping: f64,
) -> PyResult<Vec<f64>> {
    let ds = dataset(x, y)?;
    let st = amp::amp_fit(&ds, &glm.0, &amp_options(tol, max_iter, damping)).map_err(to_py)?;
    Ok(amp::loo_predictions(&st, &ds).map_err(to_py)?.to_vec())
}

/// `|y_i − θ̂_{−i}ᵀx_i|` for every row by refitting without it.
#[pyfunction]
fn exact_loo_scores(x: Vec<Vec<f64>>, y: Vec<f64>, glm: PyGlm) -> PyResult<Vec<f64>> {
    let ds = dataset(x, y)?;
    Ok(exact::exact_loo_scores(&ds, &glm.0).map_err(to_py)?.to_vec())
}

/// The same scores from one AMP fit.
#[pyfunction]
#[pyo3(signature = (x, y, glm, tol = 1e-10, max_iter = 1000))]
fn conformity_scores_amp(x: Vec<Vec<f64>>, y: Vec<f64>, glm: PyGlm, tol: f64, max_iter: usize) -> PyResult<Vec<f64>> {
    let ds = dataset(x, y)?;
    Ok(amp::conformity_scores_amp(&ds, &glm.0, &amp_options(tol, max_iter, 0.0)).map_err(to_py)?.to_vec())
}

#[pyfunction]
fn conformal_threshold(scores: Vec<f64>, kappa: f64) -> PyResult<f64> {
    conformal::conformal_threshold(Array1::from(scores).view(), kappa).map_err(to_py)
}

/// Full conformal prediction set. `grid` is `(center, half_width, points)`;
/// without it the grid is centered on the point prediction.
#[pyfunction]
#[pyo3(signature = (x, y, x_test, glm, kappa = 0.1, backend = "taylor_amp", grid_points = 200, grid = None))]
#[allow(clippy::too_many_arguments)]
fn fcp_predict(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    x_test: Vec<f64>,
    glm: PyGlm,
    kappa: f64,
    backend: &str,
    grid_points: usize,
    grid: Option<(f64, f64, usize)>,
) -> PyResult<PySet> {
    let ds = dataset(x, y)?;
    let mut cfg = ConformalConfig::new(kappa, named::<Backend>("backend", backend)?);
    cfg.grid = match grid {
        Some((c, h, k)) => GridChoice::Fixed(LabelGrid::new(c, h, k).map_err(to_py)?),
        None => GridChoice::Auto { num_points: grid_points },
    };
    let x_test = Array1::from(x_test);
    conformal::fcp_predict(&ds, x_test.view(), &glm.0, &cfg).map(PySet).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (x, y, x_test, glm, kappa = 0.1, train_fraction = 0.5, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn scp_predict(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    x_test: Vec<f64>,
    glm: PyGlm,
    kappa: f64,
    train_fraction: f64,
    seed: u64,
) -> PyResult<PySet> {
    let ds = dataset(x, y)?;
    let x_test = Array1::from(x_test);
    conformal::scp_predict(&ds, x_test.view(), &glm.0, kappa, &SplitSpec { train_fraction, seed })
        .map(PySet)
        .map_err(to_py)
}

#[pyfunction]
fn jaccard(a: PySet, b: PySet) -> f64 {
    conformal::jaccard(&a.0, &b.0)
}

/// `(coverage, mean_length, std_length)` of a list of sets.
#[pyfunction]
fn evaluate(sets: Vec<PySet>, y_true: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let sets: Vec<_> = sets.into_iter().map(|s| s.0).collect();
    let m = conformal::evaluate(&sets, &y_true).map_err(to_py)?;
    Ok((m.coverage, m.mean_length, m.std_length))
}

/// Bayes-optimal predictive interval `(lo, hi)` for a Gaussian or Laplace prior.
#[pyfunction]
#[pyo3(signature = (x, y, x_test, prior = "gaussian", noise_variance = 1.0, kappa = 0.1))]
fn bayes_interval(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    x_test: Vec<f64>,
    prior: &str,
    noise_variance: f64,
    kappa: f64,
) -> PyResult<(f64, f64)> {
    let ds = dataset(x, y)?;
    let cfg = BayesConfig { prior: named::<TeacherPrior>("prior", prior)?, noise_variance, kappa };
    let x_test = Array1::from(x_test);
    let iv = match cfg.prior {
        TeacherPrior::Gaussian => bayes::bayes_interval_gaussian(&ds, x_test.view(), &cfg),
        TeacherPrior::Laplace => bayes::bayes_interval_laplace(&ds, x_test.view(), &cfg, &AmpOptions::default()),
    }
    .map_err(to_py)?;
    Ok((iv.lo, iv.hi))
}

/// Run an experiment; `config_json` overrides the experiment's preset.
/// Returns the report as a JSON string.
#[pyfunction]
#[pyo3(signature = (experiment, config_json = None))]
fn run_experiment(py: Python<'_>, experiment: &str, config_json: Option<&str>) -> PyResult<String> {
    let kind = named::<ExperimentKind>("experiment", experiment)?;
    let overrides = match config_json {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => serde_json::json!({}),
    };
    let cfg = ExperimentConfig::from_json_overrides(kind, overrides).map_err(to_py)?;
    let report = py.detach(|| experiment::run_experiment(&cfg)).map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn conformal_amp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGlm>()?;
    m.add_class::<PySet>()?;
    m.add_class::<PyAmp>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(erm_solve, m)?)?;
    m.add_function(wrap_pyfunction!(amp_fit, m)?)?;
    m.add_function(wrap_pyfunction!(amp_loo_predictions, m)?)?;
    m.add_function(wrap_pyfunction!(exact_loo_scores, m)?)?;
    m.add_function(wrap_pyfunction!(conformity_scores_amp, m)?)?;
    m.add_function(wrap_pyfunction!(conformal_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(fcp_predict, m)?)?;
    m.add_function(wrap_pyfunction!(scp_predict, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(bayes_interval, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}

//! Python bindings. Matrices cross the boundary as lists of rows.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use relkin::harness;
use relkin::linalg::{self, Matrix};
use relkin::sim;

create_exception!(relkin_py, RelkinError, PyException);

fn err(e: relkin::Error) -> PyErr {
    RelkinError::new_err(e.to_string())
}

type Rows = Vec<Vec<f64>>;

fn to_rows(m: &Matrix) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: Rows) -> PyResult<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(RelkinError::new_err("ragged matrix rows"));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn parse_method(s: &str) -> PyResult<relkin::Method> {
    s.parse().map_err(err)
}

#[pyfunction]
fn centering_matrix(n: usize) -> PyResult<Rows> {
    linalg::centering_matrix(n)
        .map(|m| to_rows(&m))
        .map_err(err)
}

#[pyfunction]
fn vech(m: Rows) -> PyResult<Vec<f64>> {
    let v = linalg::vech(&from_rows(m)?).map_err(err)?;
    Ok(v.iter().copied().collect())
}

#[pyfunction]
fn unvech(v: Vec<f64>) -> PyResult<Rows> {
    linalg::unvech(&v).map(|m| to_rows(&m)).map_err(err)
}

#[pyfunction]
fn edm_from_points(x: Rows) -> PyResult<Rows> {
    Ok(to_rows(&linalg::edm_from_points(&from_rows(x)?)))
}

#[pyfunction]
fn gram_from_edm(d: Rows) -> PyResult<Rows> {
    linalg::gram_from_edm(&from_rows(d)?)
        .map(|m| to_rows(&m))
        .map_err(err)
}

/// Returns `(points, spectrum, degenerate)`.
#[pyfunction]
fn classical_mds(g: Rows, dim: usize) -> PyResult<(Rows, Vec<f64>, bool)> {
    let e = linalg::classical_mds(&from_rows(g)?, dim).map_err(err)?;
    Ok((to_rows(&e.points), e.spectrum.values.to_vec(), e.degenerate))
}

/// Orthogonal `R` minimizing `‖R A − B‖`.
#[pyfunction]
fn orthogonal_procrustes(a: Rows, b: Rows) -> PyResult<Rows> {
    let al = linalg::orthogonal_procrustes(&from_rows(a)?, &from_rows(b)?).map_err(err)?;
    Ok(to_rows(&al.rotation))
}

#[pyclass(name = "Trajectory", module = "relkin_py", from_py_object)]
#[derive(Clone)]
struct PyTrajectory {
    inner: sim::PolynomialTrajectory,
}

#[pymethods]
impl PyTrajectory {
    /// `coeffs[l]` is the `D x N` matrix `Y_l`.
    #[new]
    fn new(coeffs: Vec<Rows>) -> PyResult<Self> {
        let mats = coeffs.into_iter().map(from_rows).collect::<PyResult<_>>()?;
        let inner = sim::PolynomialTrajectory::new(mats).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn benchmark_scenario() -> Self {
        Self {
            inner: sim::PolynomialTrajectory::benchmark_scenario(),
        }
    }

    #[getter]
    fn coeffs(&self) -> Vec<Rows> {
        self.inner.coeffs().iter().map(to_rows).collect()
    }

    #[getter]
    fn nodes(&self) -> usize {
        self.inner.nodes()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[pyo3(signature = (t, order = 0))]
    fn eval(&self, t: f64, order: usize) -> PyResult<Rows> {
        self.inner.eval(t, order).map(|m| to_rows(&m)).map_err(err)
    }

    fn centered(&self) -> Self {
        Self {
            inner: self.inner.centered(),
        }
    }
}

#[pyclass(name = "SimConfig", module = "relkin_py", from_py_object)]
#[derive(Clone)]
struct PySimConfig {
    inner: sim::SimConfig,
}

#[pymethods]
impl PySimConfig {
    /// Keyword arguments override the defaults field by field.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let mut c = sim::SimConfig::default();
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                match key.as_str() {
                    "nodes" => c.nodes = v.extract()?,
                    "dim" => c.dim = v.extract()?,
                    "k" => c.k = v.extract()?,
                    "t_start" => c.t_start = v.extract()?,
                    "t_end" => c.t_end = v.extract()?,
                    "sigma_d" => c.sigma_d = v.extract()?,
                    "sigma_a" => c.sigma_a = v.extract()?,
                    "seed" => c.seed = v.extract()?,
                    "accel_rotation_angle" => c.accel_rotation_angle = v.extract()?,
                    "n_trials" => c.n_trials = v.extract()?,
                    other => return Err(RelkinError::new_err(format!("unknown field {other:?}"))),
                }
            }
        }
        c.validate().map_err(err)?;
        Ok(Self { inner: c })
    }

    #[getter]
    fn nodes(&self) -> usize {
        self.inner.nodes
    }
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }
    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }
    #[getter]
    fn sigma_d(&self) -> f64 {
        self.inner.sigma_d
    }
    #[getter]
    fn sigma_a(&self) -> f64 {
        self.inner.sigma_a
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[getter]
    fn n_trials(&self) -> usize {
        self.inner.n_trials
    }

    fn timestamps(&self) -> Vec<f64> {
        self.inner.timestamps()
    }
}

#[pyclass(name = "MeasurementSet", module = "relkin_py", from_py_object)]
#[derive(Clone)]
struct PyMeasurementSet {
    inner: sim::MeasurementSet,
}

#[pymethods]
impl PyMeasurementSet {
    #[getter]
    fn timestamps(&self) -> Vec<f64> {
        self.inner.timestamps.clone()
    }

    #[getter]
    fn edms(&self) -> Vec<Rows> {
        self.inner.edms.iter().map(to_rows).collect()
    }

    #[getter]
    fn accels(&self) -> Option<Vec<Rows>> {
        self.inner
            .accels
            .as_ref()
            .map(|a| a.iter().map(to_rows).collect())
    }

    fn write(&self, dir: std::path::PathBuf) -> PyResult<()> {
        relkin::io::write_bundle(&dir, &self.inner).map_err(err)
    }

    #[staticmethod]
    fn read(dir: std::path::PathBuf) -> PyResult<Self> {
        let inner = relkin::io::read_bundle(&dir).map_err(err)?;
        Ok(Self { inner })
    }
}

#[pyclass(name = "KinematicEstimate", module = "relkin_py", from_py_object)]
#[derive(Clone)]
struct PyEstimate {
    inner: relkin::KinematicEstimate,
}

#[pymethods]
impl PyEstimate {
    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.as_str()
    }
    #[getter]
    fn y0(&self) -> Rows {
        to_rows(&self.inner.y0)
    }
    #[getter]
    fn y1(&self) -> Rows {
        to_rows(&self.inner.y1)
    }
    #[getter]
    fn y2(&self) -> Rows {
        to_rows(&self.inner.y2)
    }
    #[getter]
    fn rotation(&self) -> Rows {
        to_rows(&self.inner.rotation)
    }
    #[getter]
    fn residuals(&self) -> Vec<(String, f64)> {
        self.inner.residuals.clone()
    }
    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }
}

#[pyfunction]
#[pyo3(signature = (config, trajectory, trial = 0))]
fn simulate(
    config: &PySimConfig,
    trajectory: &PyTrajectory,
    trial: u64,
) -> PyResult<PyMeasurementSet> {
    let inner = sim::simulate_trial(&config.inner, &trajectory.inner, trial).map_err(err)?;
    Ok(PyMeasurementSet { inner })
}

#[pyfunction]
#[pyo3(signature = (measurements, dim = 2))]
fn estimate_from_distances(
    py: Python<'_>,
    measurements: &PyMeasurementSet,
    dim: usize,
) -> PyResult<PyEstimate> {
    let m = measurements.inner.clone();
    let inner = py
        .detach(move || relkin::estimate_from_distances(&m, dim))
        .map_err(err)?;
    Ok(PyEstimate { inner })
}

#[pyfunction]
#[pyo3(signature = (measurements, dim = 2))]
fn estimate_with_accel(
    py: Python<'_>,
    measurements: &PyMeasurementSet,
    dim: usize,
) -> PyResult<PyEstimate> {
    let m = measurements.inner.clone();
    let inner = py
        .detach(move || relkin::estimate_with_accel(&m, dim))
        .map_err(err)?;
    Ok(PyEstimate { inner })
}

#[pyfunction]
fn align_to_truth(estimate: &PyEstimate, truth: &PyTrajectory) -> PyResult<PyEstimate> {
    let inner = harness::align_to_truth(&estimate.inner, &truth.inner).map_err(err)?;
    Ok(PyEstimate { inner })
}

/// Returns `{"rmse": [(method, K, block, rmse)], "time_sweep": [(method, K,
/// t, rmse)], "failures": [(method, K, trial, message)]}`.
#[pyfunction]
#[pyo3(signature = (config, truth, methods = vec!["distance".to_string(), "accel".to_string()], k_values = vec![10, 20, 30, 40, 50]))]
fn run_monte_carlo<'py>(
    py: Python<'py>,
    config: &PySimConfig,
    truth: &PyTrajectory,
    methods: Vec<String>,
    k_values: Vec<usize>,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let methods = methods
        .iter()
        .map(|m| parse_method(m))
        .collect::<PyResult<Vec<_>>>()?;
    let (cfg, traj) = (config.inner.clone(), truth.inner.clone());
    let report = py
        .detach(move || harness::run_monte_carlo(&cfg, &traj, &methods, &k_values))
        .map_err(err)?;
    let out = pyo3::types::PyDict::new(py);
    let rmse: Vec<_> = report
        .table
        .rows
        .iter()
        .map(|r| (r.method.as_str(), r.k, r.block.as_str(), r.rmse))
        .collect();
    let sweep: Vec<_> = report
        .time_sweep
        .iter()
        .map(|r| (r.method.as_str(), r.k, r.t, r.rmse))
        .collect();
    let failures: Vec<_> = report
        .failures
        .iter()
        .map(|f| (f.method.as_str(), f.k, f.trial_index, f.message.clone()))
        .collect();
    out.set_item("rmse", rmse)?;
    out.set_item("time_sweep", sweep)?;
    out.set_item("failures", failures)?;
    Ok(out)
}

#[pymodule]
fn relkin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RelkinError", m.py().get_type::<RelkinError>())?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PySimConfig>()?;
    m.add_class::<PyMeasurementSet>()?;
    m.add_class::<PyEstimate>()?;
    m.add_function(wrap_pyfunction!(centering_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(vech, m)?)?;
    m.add_function(wrap_pyfunction!(unvech, m)?)?;
    m.add_function(wrap_pyfunction!(edm_from_points, m)?)?;
    m.add_function(wrap_pyfunction!(gram_from_edm, m)?)?;
    m.add_function(wrap_pyfunction!(classical_mds, m)?)?;
    m.add_function(wrap_pyfunction!(orthogonal_procrustes, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_from_distances, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_with_accel, m)?)?;
    m.add_function(wrap_pyfunction!(align_to_truth, m)?)?;
    m.add_function(wrap_pyfunction!(run_monte_carlo, m)?)?;
    Ok(())
}

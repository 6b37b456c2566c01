//! Python bindings. Files and tiers are 0-based and thresholds linear, as in
//! the Rust API.

use chn_core::analytic::{self, Analyzer, AnalyticError, DelayValue, RhoKind};
use chn_core::mc::{self, McError, McEstimate, McOptions};
use chn_core::model::{ConfigError, NetworkConfig};
use chn_core::quadrature::Tolerance;
use pyo3::exceptions::{PyArithmeticError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn config_err(e: ConfigError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn analytic_err(e: AnalyticError) -> PyErr {
    match e {
        AnalyticError::Model(m) => PyIndexError::new_err(m.to_string()),
        AnalyticError::Quadrature(q) => PyArithmeticError::new_err(q.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn mc_err(e: McError) -> PyErr {
    match e {
        McError::Model(m) => PyIndexError::new_err(m.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A validated network configuration.
#[pyclass(name = "Network", frozen)]
struct PyNetwork {
    inner: NetworkConfig,
}

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        NetworkConfig::from_json_str(text).map(|inner| Self { inner }).map_err(config_err)
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> String {
        self.inner.to_json_string()
    }

    #[getter]
    fn num_tiers(&self) -> usize {
        self.inner.num_tiers()
    }

    #[getter]
    fn num_files(&self) -> usize {
        self.inner.num_files()
    }

    fn thinned_density(&self, tier: usize, file: usize) -> PyResult<f64> {
        self.inner
            .thinned_density(tier, file)
            .map_err(|e| PyIndexError::new_err(e.to_string()))
    }

    fn with_density(&self, tier: usize, density: f64) -> PyResult<Self> {
        self.inner
            .with_density(tier, density)
            .map(|inner| Self { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn with_activity(&self, tier: usize, activity: f64) -> PyResult<Self> {
        self.inner
            .with_activity(tier, activity)
            .map(|inner| Self { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Network(tiers={}, files={})", self.inner.num_tiers(), self.inner.num_files())
    }
}

fn tolerance(abs_tol: Option<f64>, rel_tol: Option<f64>) -> Tolerance {
    let d = Tolerance::default();
    Tolerance::new(abs_tol.unwrap_or(d.abs), rel_tol.unwrap_or(d.rel))
}

/// One rho integral; `kind` is 1 to 4. Infinite values come back as `inf`.
#[pyfunction]
#[pyo3(signature = (kind, alpha, tau, activity=1.0))]
fn rho(kind: u8, alpha: f64, tau: f64, activity: f64) -> PyResult<f64> {
    let kind = match kind {
        1 => RhoKind::Rho1,
        2 => RhoKind::Rho2,
        3 => RhoKind::Rho3,
        4 => RhoKind::Rho4,
        _ => return Err(PyValueError::new_err("kind must be 1, 2, 3 or 4")),
    };
    analytic::rho(kind, alpha, tau, activity).map_err(analytic_err)
}

#[pyfunction]
fn association_probability(network: &PyNetwork, file: usize, tier: usize) -> PyResult<f64> {
    analytic::association_probability(&network.inner, file, tier).map_err(analytic_err)
}

#[pyfunction]
fn serving_distance_pdf(network: &PyNetwork, file: usize, tier: usize, x: f64) -> PyResult<f64> {
    analytic::serving_distance_pdf(&network.inner, file, tier, x).map_err(analytic_err)
}

/// Returns `(total, per_tier)`; per-tier entries are `None` where the tier
/// never serves the file.
#[pyfunction]
#[pyo3(signature = (network, file, tau, abs_tol=None, rel_tol=None))]
fn coverage(
    network: &PyNetwork,
    file: usize,
    tau: f64,
    abs_tol: Option<f64>,
    rel_tol: Option<f64>,
) -> PyResult<(f64, Vec<Option<f64>>)> {
    let b = Analyzer::new(&network.inner)
        .with_tolerance(tolerance(abs_tol, rel_tol))
        .coverage(file, tau)
        .map_err(analytic_err)?;
    Ok((b.total, b.per_tier.iter().map(|t| t.coverage).collect()))
}

#[pyfunction]
fn coverage_equal_alpha(network: &PyNetwork, file: usize, tau: f64) -> PyResult<f64> {
    analytic::coverage_equal_alpha(&network.inner, file, tau)
        .map(|b| b.total)
        .map_err(analytic_err)
}

/// Returns `(total, per_tier)` with `inf` for infinite delays.
#[pyfunction]
#[pyo3(signature = (network, file, tau, abs_tol=None, rel_tol=None))]
fn delay(
    network: &PyNetwork,
    file: usize,
    tau: f64,
    abs_tol: Option<f64>,
    rel_tol: Option<f64>,
) -> PyResult<(f64, Vec<Option<f64>>)> {
    let b = Analyzer::new(&network.inner)
        .with_tolerance(tolerance(abs_tol, rel_tol))
        .delay(file, tau)
        .map_err(analytic_err)?;
    Ok((b.total.value(), b.per_tier.iter().map(|t| t.delay.map(|d| d.value())).collect()))
}

#[pyfunction]
fn delay_equal_alpha(network: &PyNetwork, file: usize, tau: f64) -> PyResult<f64> {
    analytic::delay_equal_alpha(&network.inner, file, tau)
        .map(|d: DelayValue| d.value())
        .map_err(analytic_err)
}

fn estimate_dict<'py>(py: Python<'py>, e: &McEstimate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean", e.mean)?;
    d.set_item("std_error", e.std_error)?;
    d.set_item("ci95", (e.ci95_lo, e.ci95_hi))?;
    d.set_item("samples_used", e.samples_used)?;
    d.set_item("samples_discarded", e.samples_discarded)?;
    d.set_item("heavy_tail_flag", e.heavy_tail_flag)?;
    Ok(d)
}

/// Monte Carlo coverage and delay from one set of realizations.
#[pyfunction]
#[pyo3(signature = (network, file, tau, samples=100_000, seed=0, window_radius=None, far_field=true))]
fn simulate<'py>(
    py: Python<'py>,
    network: &PyNetwork,
    file: usize,
    tau: f64,
    samples: usize,
    seed: u64,
    window_radius: Option<f64>,
    far_field: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = McOptions {
        window_radius,
        far_field_correction: far_field,
        ..McOptions::with_samples(samples, seed)
    };
    let cfg = &network.inner;
    let s = py.detach(|| mc::simulate(cfg, file, tau, &opts)).map_err(mc_err)?;
    let d = PyDict::new(py);
    d.set_item("coverage", estimate_dict(py, &s.coverage)?)?;
    d.set_item("delay", estimate_dict(py, &s.delay)?)?;
    d.set_item("window_radius", s.window_radius)?;
    d.set_item("seed", s.seed)?;
    d.set_item("rng", s.rng_algorithm)?;
    Ok(d)
}

#[pymodule]
fn chn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(rho, m)?)?;
    m.add_function(wrap_pyfunction!(association_probability, m)?)?;
    m.add_function(wrap_pyfunction!(serving_distance_pdf, m)?)?;
    m.add_function(wrap_pyfunction!(coverage, m)?)?;
    m.add_function(wrap_pyfunction!(coverage_equal_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(delay, m)?)?;
    m.add_function(wrap_pyfunction!(delay_equal_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}

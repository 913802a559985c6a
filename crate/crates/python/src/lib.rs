//! Python bindings: `import stringstab`.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::stringstab as ss;
use ::stringstab::{BoundaryConvention, DisturbanceProfile, SimParams, SweepParams};

fn to_py(e: ss::Error) -> PyErr {
    match e {
        ss::Error::Domain(_) | ss::Error::Config { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

#[pyclass(name = "Topology", frozen)]
struct PyTopology {
    inner: ss::Topology,
}

#[pymethods]
impl PyTopology {
    #[new]
    #[pyo3(signature = (n, r, boundary = "leader_padded"))]
    fn new(n: usize, r: usize, boundary: &str) -> PyResult<Self> {
        let convention: BoundaryConvention = boundary.parse().map_err(to_py)?;
        let inner = ss::build_r_predecessor(n, r, convention).map_err(to_py)?;
        Ok(PyTopology { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn r(&self) -> usize {
        self.inner.r()
    }

    #[getter]
    fn boundary(&self) -> String {
        self.inner.convention().to_string()
    }

    /// Follower Laplacian as a list of rows.
    fn laplacian(&self) -> Vec<Vec<f64>> {
        self.inner.laplacian_rows()
    }

    fn degrees(&self) -> Vec<usize> {
        self.inner.degrees().to_vec()
    }

    fn eigenvalues(&self) -> Vec<f64> {
        ss::laplacian_eigenvalues_triangular(&self.inner)
    }

    fn has_spanning_tree(&self) -> bool {
        ss::has_spanning_tree(&self.inner.to_graph())
    }

    fn __repr__(&self) -> String {
        format!("Topology(n={}, r={}, boundary='{}')", self.inner.n(), self.inner.r(), self.inner.convention())
    }
}

#[pyclass(name = "Protocol", frozen)]
struct PyProtocol {
    inner: ss::ProtocolConfig,
}

#[pymethods]
impl PyProtocol {
    #[new]
    #[pyo3(signature = (gains, coupling = 1.0))]
    fn new(gains: Vec<f64>, coupling: f64) -> PyResult<Self> {
        let inner = ss::ProtocolConfig::new(gains, coupling).map_err(to_py)?;
        Ok(PyProtocol { inner })
    }

    /// Reference gains truncated to order `m`.
    #[staticmethod]
    fn reference(m: usize) -> PyResult<Self> {
        let inner = ss::ProtocolConfig::reference(m).map_err(to_py)?;
        Ok(PyProtocol { inner })
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn gains(&self) -> Vec<f64> {
        self.inner.gains().to_vec()
    }

    #[getter]
    fn coupling(&self) -> f64 {
        self.inner.coupling()
    }

    /// Coefficients of `lambda^m - mu Q(lambda)`, constant term first.
    fn mode_polynomial(&self, mu: f64) -> Vec<f64> {
        ss::mode_polynomial(&self.inner, mu).coefficients().to_vec()
    }

    fn phi(&self, r: usize, s: Complex64) -> PyResult<Complex64> {
        ss::eval_phi(&self.inner, r, s).map_err(to_py)
    }

    fn g(&self, r: usize, s: Complex64) -> PyResult<Complex64> {
        ss::eval_g(&self.inner, r, s).map_err(to_py)
    }

    fn dc_gain(&self, r: usize) -> PyResult<f64> {
        ss::dc_gain(&self.inner, r).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Protocol(gains={:?}, coupling={})", self.inner.gains(), self.inner.coupling())
    }
}

/// Roots of `sum_k c[k] x^k`.
#[pyfunction]
fn polynomial_roots(coefficients: Vec<f64>) -> PyResult<Vec<Complex64>> {
    let p = ss::RealPolynomial::new(coefficients).map_err(to_py)?;
    ss::polynomial_roots(&p).map_err(to_py)
}

/// `"stable"`, `"unstable"` or `"indeterminate"`.
#[pyfunction]
fn routh_hurwitz(coefficients: Vec<f64>) -> PyResult<String> {
    let p = ss::RealPolynomial::new(coefficients).map_err(to_py)?;
    Ok(ss::routh_hurwitz_stable(&p).to_string())
}

#[pyfunction]
fn check<'py>(py: Python<'py>, topology: &PyTopology, protocol: &PyProtocol) -> PyResult<Bound<'py, PyDict>> {
    let check = ss::internal_stability_check(&topology.inner, &protocol.inner).map_err(to_py)?;
    let modes = check
        .modes
        .iter()
        .map(|mode| {
            let d = PyDict::new(py);
            d.set_item("mu", mode.mu)?;
            d.set_item("roots", mode.roots.clone())?;
            d.set_item("routh", mode.routh.to_string())?;
            d.set_item("margin", mode.margin)?;
            d.set_item("stable", mode.stable)?;
            d.set_item("consensus_mode", mode.consensus_mode)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let out = PyDict::new(py);
    out.set_item("modes", modes)?;
    out.set_item("overall", check.overall)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (protocol, r, omega_min = 1e-3, omega_max = 1e3, points = 2000, tolerance = 1e-6))]
fn hinf_estimate<'py>(
    py: Python<'py>,
    protocol: &PyProtocol,
    r: usize,
    omega_min: f64,
    omega_max: f64,
    points: usize,
    tolerance: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let params = SweepParams {
        omega_min,
        omega_max,
        points,
        tolerance,
    };
    let report = ss::hinf_estimate(&protocol.inner, r, &params).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("dc_gain", report.dc_gain)?;
    out.set_item("hinf", report.hinf)?;
    out.set_item("omega_peak", report.omega_peak)?;
    out.set_item("verdict", report.verdict.to_string())?;
    out.set_item("tolerance", report.tolerance)?;
    Ok(out)
}

/// `|E_i(j w) / W(j w)|` for follower `i` over the given frequencies.
#[pyfunction]
fn follower_response(protocol: &PyProtocol, topology: &PyTopology, i: usize, omegas: Vec<f64>) -> PyResult<Vec<f64>> {
    let grid = ss::FrequencyGrid::new(omegas, ss::Spacing::Linear).map_err(to_py)?;
    let response = ss::follower_chain_response(&protocol.inner, &topology.inner, i, &grid).map_err(to_py)?;
    Ok(response.magnitudes)
}

/// Impulse (or step) response of the error system.
///
/// Returns a dict with `times`, `eps` and `spacing` (lists of per-sample rows)
/// plus `peaks`, `ratios` and `settling`.
#[pyfunction]
#[pyo3(signature = (topology, protocol, dt = 1e-3, horizon = 100.0, record_every = 10, step = None, allow_unstable = false))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    topology: &PyTopology,
    protocol: &PyProtocol,
    dt: f64,
    horizon: f64,
    record_every: usize,
    step: Option<f64>,
    allow_unstable: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let params = SimParams {
        dt,
        horizon,
        record_every,
        allow_unstable,
    };
    let dist = match step {
        Some(height) => DisturbanceProfile::Step { height },
        None => DisturbanceProfile::UnitImpulse,
    };
    let trace = py
        .detach(|| ss::simulate(&topology.inner, &protocol.inner, &dist, &params))
        .map_err(to_py)?;
    let (samples, n) = trace.spacing.shape();
    let eps: Vec<Vec<f64>> = (0..samples).map(|j| (1..=n).map(|i| trace.eps(j, i)).collect()).collect();
    let spacing: Vec<Vec<f64>> = (0..samples).map(|j| (0..n).map(|i| trace.spacing[(j, i)]).collect()).collect();
    let out = PyDict::new(py);
    out.set_item("times", trace.times.clone())?;
    out.set_item("eps", eps)?;
    out.set_item("spacing", spacing)?;
    out.set_item("peaks", trace.metrics.peaks.clone())?;
    out.set_item("ratios", trace.metrics.ratios.clone())?;
    out.set_item("settling", trace.metrics.settling.clone())?;
    Ok(out)
}

#[pymodule]
#[pyo3(name = "stringstab")]
fn stringstab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTopology>()?;
    m.add_class::<PyProtocol>()?;
    m.add_function(wrap_pyfunction!(polynomial_roots, m)?)?;
    m.add_function(wrap_pyfunction!(routh_hurwitz, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(hinf_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(follower_response, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}

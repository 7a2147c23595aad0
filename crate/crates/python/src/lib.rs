//! Python module `pyslb`.
//!
//! Sources, distortion specs and test channels are classes; the
//! experiments are functions returning floats, tuples or dicts. Every
//! random operation takes an explicit integer seed.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use slb_core::entropy::{self, EntropyEstimate};
use slb_core::geometry::NormSpec;
use slb_core::infodim;
use slb_core::quantizer_bench::{self, RdOracle, Reconstruction};
use slb_core::rd_solver::{self, BaSettings};
use slb_core::rng::stream;
use slb_core::shannon_bound::{self, GapSettings};
use slb_core::sources::{self, SourceModel};
use slb_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_) | Error::DimensionMismatch { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn estimate(e: EntropyEstimate) -> (f64, f64) {
    (e.value, e.standard_error)
}

#[pyclass(frozen, name = "Source")]
struct PySource(SourceModel);

#[pymethods]
impl PySource {
    #[staticmethod]
    #[pyo3(signature = (dim = 1, variance = 1.0))]
    fn gaussian(dim: usize, variance: f64) -> PyResult<Self> {
        sources::make_gaussian(dim, variance).map(Self).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (rate = 1.0))]
    fn laplacian(rate: f64) -> PyResult<Self> {
        sources::make_laplacian(rate).map(Self).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (low = 0.0, high = 1.0))]
    fn uniform(low: f64, high: f64) -> PyResult<Self> {
        sources::make_uniform(low, high).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn generalized_gaussian(exponent: f64, scale: f64) -> PyResult<Self> {
        sources::make_generalized_gaussian(exponent, scale).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn pathological(max_index: usize) -> PyResult<Self> {
        sources::make_pathological(max_index).map(Self).map_err(py_err)
    }

    /// Atom at `atom` with probability `weight`, `N(0, variance)` otherwise.
    #[staticmethod]
    #[pyo3(signature = (weight, atom = 0.0, variance = 1.0))]
    fn mixture(weight: f64, atom: f64, variance: f64) -> PyResult<Self> {
        let continuous = sources::make_gaussian(1, variance).map_err(py_err)?;
        sources::make_mixture(weight, vec![(vec![atom], 1.0)], continuous).map(Self).map_err(py_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name().to_string()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn pdf(&self, x: Vec<f64>) -> PyResult<f64> {
        self.0.pdf(&x).map_err(py_err)
    }

    fn cdf(&self, x: f64) -> PyResult<f64> {
        self.0.cdf(x).map_err(py_err)
    }

    /// `n` draws, row-major.
    fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        self.0.sample_n(&mut stream(seed, 0), n)
    }

    /// `h(X)` in nats, or `None`.
    fn differential_entropy(&self) -> Option<f64> {
        self.0.closed_form_h()
    }

    /// `H(floor X)` in nats, or `None`.
    fn floor_entropy(&self) -> Option<f64> {
        self.0.closed_form_floor_entropy()
    }

    fn __repr__(&self) -> String {
        format!("Source({:?}, dim={})", self.0.name(), self.0.dim())
    }
}

#[pyclass(frozen, name = "DistortionSpec")]
struct PyDistortionSpec(shannon_bound::DistortionSpec);

#[pymethods]
impl PyDistortionSpec {
    /// `p = float("inf")` selects the max norm.
    #[new]
    #[pyo3(signature = (dim, r, distortion, p = 2.0))]
    fn new(dim: usize, r: f64, distortion: f64, p: f64) -> PyResult<Self> {
        let norm = NormSpec::p_norm(p, dim).map_err(py_err)?;
        shannon_bound::DistortionSpec::new(norm, r, distortion).map(Self).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn r(&self) -> f64 {
        self.0.exponent()
    }

    #[getter]
    fn distortion(&self) -> f64 {
        self.0.distortion()
    }

    fn noise_entropy(&self) -> f64 {
        shannon_bound::NoiseChannel::new(self.0).entropy()
    }

    fn noise_pdf(&self, z: Vec<f64>) -> PyResult<f64> {
        shannon_bound::NoiseChannel::new(self.0).pdf(&z).map_err(py_err)
    }

    /// `n` draws of the test-channel noise, row-major.
    fn sample_noise(&self, n: usize, seed: u64) -> PyResult<Vec<f64>> {
        shannon_bound::NoiseChannel::new(self.0).sample_n(&mut stream(seed, 0), n).map_err(py_err)
    }
}

/// Shannon lower bound `h - noise_entropy`.
#[pyfunction]
fn slb(h: f64, spec: &PyDistortionSpec) -> PyResult<f64> {
    shannon_bound::slb(h, spec.0.dim(), &spec.0).map(|b| b.value).map_err(py_err)
}

/// `(value, standard_error)` of the gap bound `h(X + Z_D) - h(X)`.
#[pyfunction]
#[pyo3(signature = (source, spec, seed = 0))]
fn gap_upper_bound(source: &PySource, spec: &PyDistortionSpec, seed: u64) -> PyResult<(f64, f64)> {
    shannon_bound::gap_upper_bound(&source.0, &spec.0, &GapSettings::default(), &mut stream(seed, 0))
        .map(estimate)
        .map_err(py_err)
}

#[pyfunction]
fn discrete_entropy(pmf: Vec<f64>) -> PyResult<f64> {
    entropy::discrete_entropy(&pmf).map(|e| e.value).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (source, n, seed = 0))]
fn floor_entropy_mc(source: &PySource, n: usize, seed: u64) -> PyResult<(f64, f64)> {
    entropy::floor_entropy_mc(&source.0, n, &mut stream(seed, 0)).map(estimate).map_err(py_err)
}

/// Kozachenko–Leonenko estimate from row-major samples.
#[pyfunction]
#[pyo3(signature = (samples, dim, k = 3))]
fn diff_entropy_knn(samples: Vec<f64>, dim: usize, k: usize) -> PyResult<(f64, f64)> {
    entropy::diff_entropy_knn(&samples, dim, k).map(estimate).map_err(py_err)
}

/// Blahut–Arimoto `R(D)` on an `n x n` grid over `[lo, hi]`.
#[pyfunction]
#[pyo3(signature = (source, distortion, lo, hi, cells = 1024, r = 2.0, rel_tol = 1e-3))]
fn rate_at_distortion<'py>(
    py: Python<'py>,
    source: &PySource,
    distortion: f64,
    lo: f64,
    hi: f64,
    cells: usize,
    r: f64,
    rel_tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let problem = rd_solver::discretize(&source.0, (lo, hi), cells, cells, r).map_err(py_err)?;
    let t = py
        .detach(|| rd_solver::rate_at_distortion(&problem, distortion, &BaSettings::default(), rel_tol))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("distortion", t.distortion)?;
    d.set_item("rate", t.rate)?;
    d.set_item("rate_lower", t.point.rate_lower)?;
    d.set_item("achieved_distortion", t.point.distortion)?;
    d.set_item("slope", t.point.slope)?;
    d.set_item("converged", t.point.converged)?;
    Ok(d)
}

/// Entropy and distortion of the uniform quantizer with step `step`.
#[pyfunction]
#[pyo3(signature = (source, step, r = 2.0, midpoint = false))]
fn quantizer_report<'py>(
    py: Python<'py>,
    source: &PySource,
    step: f64,
    r: f64,
    midpoint: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let recon = if midpoint { Reconstruction::Midpoint } else { Reconstruction::WithinCell };
    let q = quantizer_bench::uniform_quantizer_report(&source.0, step, r, recon, &RdOracle::Analytic)
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("step", q.step)?;
    d.set_item("entropy", q.entropy)?;
    d.set_item("distortion", q.distortion)?;
    d.set_item("gap_to_rd", q.gap_to_rd)?;
    d.set_item("gap_to_slb", q.gap_to_slb)?;
    d.set_item("cells", q.cells)?;
    Ok(d)
}

#[pyfunction]
fn high_resolution_excess() -> f64 {
    quantizer_bench::high_resolution_excess()
}

#[pyfunction]
#[pyo3(signature = (source, m_grid, n, seed = 0))]
fn info_dimension<'py>(
    py: Python<'py>,
    source: &PySource,
    m_grid: Vec<u64>,
    n: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let est = py
        .detach(|| infodim::info_dimension(&source.0, &m_grid, n, &mut stream(seed, 0)))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("m_grid", est.m_grid)?;
    d.set_item("entropies", est.entropies.iter().map(|e| e.value).collect::<Vec<_>>())?;
    d.set_item("cells", est.cells)?;
    d.set_item("slope", est.slope)?;
    d.set_item("residual", est.residual)?;
    d.set_item("undersampled", est.undersampled)?;
    Ok(d)
}

/// Both converse inequalities on a law given as `(x, x_hat, probability)`.
#[pyfunction]
fn converse_check<'py>(py: Python<'py>, law: Vec<(Vec<f64>, Vec<f64>, f64)>) -> PyResult<Bound<'py, PyDict>> {
    let r = infodim::converse_inequality_check(&law).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("h_x_given_xhat", r.h_x_given_xhat)?;
    d.set_item("h_difference", r.h_difference)?;
    d.set_item("h_x_given_xhat_difference", r.h_x_given_xhat_difference)?;
    d.set_item("carry_bound", r.carry_bound)?;
    d.set_item("chain_holds", r.chain_holds())?;
    d.set_item("carry_holds", r.carry_holds())?;
    Ok(d)
}

#[pymodule]
fn pyslb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", slb_core::VERSION)?;
    m.add_class::<PySource>()?;
    m.add_class::<PyDistortionSpec>()?;
    m.add_function(wrap_pyfunction!(slb, m)?)?;
    m.add_function(wrap_pyfunction!(gap_upper_bound, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(floor_entropy_mc, m)?)?;
    m.add_function(wrap_pyfunction!(diff_entropy_knn, m)?)?;
    m.add_function(wrap_pyfunction!(rate_at_distortion, m)?)?;
    m.add_function(wrap_pyfunction!(quantizer_report, m)?)?;
    m.add_function(wrap_pyfunction!(high_resolution_excess, m)?)?;
    m.add_function(wrap_pyfunction!(info_dimension, m)?)?;
    m.add_function(wrap_pyfunction!(converse_check, m)?)?;
    Ok(())
}

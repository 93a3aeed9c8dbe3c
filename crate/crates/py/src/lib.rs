//! Python bindings for the micromaser crate.

use micromaser::{
    analyze, build_generator, emit_markers, run_sweep, stationary_nullspace, Error,
    GeneratorMatrix, Model, ModelParams, QuadratureSpec, SpectralOptions, SweepConfig,
};
use micromaser::spectral::spectrum as eig_spectrum;
use micromaser::sweep::MarkerKind;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_) | Error::ConfigInvalid(_) | Error::TruncationTooSmall { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_model(model: &str) -> PyResult<Model> {
    model.parse().map_err(PyValueError::new_err)
}

fn build(
    model: &str,
    n_max: usize,
    flux_n: f64,
    n_b: f64,
    theta: f64,
    eps: f64,
) -> PyResult<(GeneratorMatrix, ModelParams)> {
    let params = ModelParams::one_atom(flux_n, n_b, theta).with_eps(eps);
    let l = build_generator(parse_model(model)?, n_max, &params, &QuadratureSpec::default())
        .map_err(to_py)?;
    Ok((l, params))
}

/// Stationary statistics and relaxation data at a single point.
#[pyclass(get_all, frozen)]
struct Summary {
    mean_n: f64,
    mean_x: f64,
    var_n: f64,
    lambda1_re: f64,
    lambda1_im: f64,
    corr_length: f64,
    residual: f64,
    tail_mass: f64,
}

#[pymethods]
impl Summary {
    fn __repr__(&self) -> String {
        format!(
            "Summary(mean_n={}, mean_x={}, lambda1_re={}, corr_length={})",
            self.mean_n, self.mean_x, self.lambda1_re, self.corr_length
        )
    }
}

/// Dense generator as a list of rows.
#[pyfunction]
#[pyo3(signature = (model, n_max, flux_n, n_b, theta, eps=0.0))]
fn generator(
    model: &str,
    n_max: usize,
    flux_n: f64,
    n_b: f64,
    theta: f64,
    eps: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let (l, _) = build(model, n_max, flux_n, n_b, theta, eps)?;
    Ok((0..l.dim())
        .map(|i| (0..l.dim()).map(|j| l.get(i, j)).collect())
        .collect())
}

/// Stationary photon distribution from the nullspace of the generator.
#[pyfunction]
#[pyo3(signature = (model, n_max, flux_n, n_b, theta, eps=0.0))]
fn stationary(
    model: &str,
    n_max: usize,
    flux_n: f64,
    n_b: f64,
    theta: f64,
    eps: f64,
) -> PyResult<Vec<f64>> {
    let (l, _) = build(model, n_max, flux_n, n_b, theta, eps)?;
    Ok(stationary_nullspace(&l).map_err(to_py)?.probs)
}

/// Eigenvalues of the generator sorted by real part.
#[pyfunction]
#[pyo3(signature = (model, n_max, flux_n, n_b, theta, eps=0.0))]
fn spectrum(
    model: &str,
    n_max: usize,
    flux_n: f64,
    n_b: f64,
    theta: f64,
    eps: f64,
) -> PyResult<Vec<(f64, f64)>> {
    let (l, _) = build(model, n_max, flux_n, n_b, theta, eps)?;
    Ok(eig_spectrum(&l)
        .map_err(to_py)?
        .into_iter()
        .map(|e| (e.re, e.im))
        .collect())
}

#[pyfunction]
#[pyo3(name = "analyze", signature = (model, n_max, flux_n, n_b, theta, eps=0.0))]
fn analyze_point(
    model: &str,
    n_max: usize,
    flux_n: f64,
    n_b: f64,
    theta: f64,
    eps: f64,
) -> PyResult<Summary> {
    let (l, params) = build(model, n_max, flux_n, n_b, theta, eps)?;
    let s = analyze(&l, params.flux_n, &SpectralOptions::default()).map_err(to_py)?;
    Ok(Summary {
        mean_n: s.mean_n,
        mean_x: s.mean_x,
        var_n: s.var_n,
        lambda1_re: s.lambda1_re,
        lambda1_im: s.lambda1_im,
        corr_length: s.corr_length,
        residual: s.residual,
        tail_mass: s.tail_mass,
    })
}

/// (U_aa, U_ab, U_bb) for photon number n, split u = s/τ and coupling gτ.
#[pyfunction]
fn two_atom_coeffs(n: usize, split: f64, g_tau: f64) -> (f64, f64, f64) {
    let c = micromaser::two_atom_coeffs(n, split, g_tau);
    (c.u_aa, c.u_ab, c.u_bb)
}

/// Run a sweep described by a JSON config; returns one dict per grid point.
#[pyfunction]
fn sweep<'py>(py: Python<'py>, config_json: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let config = SweepConfig::from_json(config_json).map_err(to_py)?;
    let records = py.detach(|| run_sweep(&config)).map_err(to_py)?;
    records
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("theta", r.theta)?;
            d.set_item("eps", r.eps)?;
            d.set_item("mean_n", r.mean_n)?;
            d.set_item("mean_x", r.mean_x)?;
            d.set_item("var_n", r.var_n)?;
            d.set_item("lambda1_re", r.lambda1_re)?;
            d.set_item("lambda1_im", r.lambda1_im)?;
            d.set_item("corr_length", r.corr_length)?;
            d.set_item("residual", r.residual)?;
            d.set_item("tail_mass", r.tail_mass)?;
            d.set_item("quad_panels", r.quad_panels)?;
            d.set_item("flags", r.flags)?;
            Ok(d)
        })
        .collect()
}

/// Marker positions for a sweep config as (theta, label) pairs.
#[pyfunction]
fn markers(config_json: &str) -> PyResult<Vec<(f64, String)>> {
    let config = SweepConfig::from_json(config_json).map_err(to_py)?;
    Ok(emit_markers(&config)
        .into_iter()
        .map(|m| {
            let label = match m.kind {
                MarkerKind::Trapping { k, n } => format!("trapping k={k} n={n}"),
                MarkerKind::Phase(name) => name.to_string(),
            };
            (m.theta, label)
        })
        .collect())
}

#[pymodule]
fn micromaser_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Summary>()?;
    m.add_function(wrap_pyfunction!(generator, m)?)?;
    m.add_function(wrap_pyfunction!(stationary, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_point, m)?)?;
    m.add_function(wrap_pyfunction!(two_atom_coeffs, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(markers, m)?)?;
    Ok(())
}

//! Python bindings. Results come back as plain dicts and lists.

use std::path::PathBuf;

use ordlab_core::cli::{self, Command, RunConfig};
use ordlab_core::estimate::IllustrativeOptions;
use ordlab_core::simulate::{DgpSpec, Scale};
use ordlab_core::{weights, Error};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

/// Bad input raises ValueError, numerical failure ArithmeticError, and I/O
/// OSError. The message is the same JSON the command line prints.
fn to_py(err: Error) -> PyErr {
    let msg = cli::error_json(&err).to_string();
    match cli::exit_code(&err) {
        3 => PyArithmeticError::new_err(msg),
        1 => PyOSError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn to_object<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| to_py(e.into()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn preset_spec(preset: &str, seed: u64) -> PyResult<DgpSpec> {
    let mut spec = ordlab_core::simulate::preset(preset).map_err(to_py)?;
    spec.seed = seed;
    Ok(spec)
}

fn illustrative_scale(preset: &str) -> PyResult<Scale> {
    match preset {
        "illustrative_binary" => Ok(Scale::Binary),
        "illustrative_11" => Ok(Scale::Eleven),
        other => Err(to_py(Error::Config(format!("`{other}` is not an illustrative preset")))),
    }
}

/// Names of the built-in DGPs.
#[pyfunction]
fn presets() -> Vec<&'static str> {
    ordlab_core::simulate::PRESETS.to_vec()
}

/// Weight decomposition of a preset's reporting population.
#[pyfunction]
#[pyo3(signature = (preset, seed=1))]
fn weights_report(py: Python<'_>, preset: &str, seed: u64) -> PyResult<Py<PyAny>> {
    let spec = preset_spec(preset, seed)?;
    let report = py.detach(|| cli::weights_report(&spec)).map_err(to_py)?;
    to_object(py, &report)
}

/// One row per `(delta, categories)` cell.
#[pyfunction]
#[pyo3(signature = (preset, deltas, categories, seed=1))]
fn ratio_table(py: Python<'_>, preset: &str, deltas: Vec<f64>, categories: Vec<usize>, seed: u64) -> PyResult<Py<PyAny>> {
    let spec = preset_spec(preset, seed)?;
    let table_seed = ordlab_core::seed::derive(seed, "figure_table", &[]);
    let rows = py.detach(|| weights::ratio_table(&spec, &deltas, &categories, table_seed)).map_err(to_py)?;
    to_object(py, &rows)
}

/// Simulated sample as a dict of columns.
#[pyfunction]
#[pyo3(signature = (preset, n, seed, with_latent=false, rho=None))]
fn simulate(py: Python<'_>, preset: &str, n: usize, seed: u64, with_latent: bool, rho: Option<f64>) -> PyResult<Py<PyAny>> {
    let cfg = RunConfig {
        command: Some(Command::Simulate),
        preset: Some(preset.into()),
        n: Some(n),
        seed: Some(seed),
        rho,
        ..Default::default()
    };
    let data = py.detach(|| cfg.resolve().and_then(|c| cli::dataset(&c))).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("R", data.r.clone())?;
    for (name, col) in data.regressor_names.iter().zip(&data.x) {
        out.set_item(name, col.clone())?;
    }
    if let (true, Some(latent)) = (with_latent, &data.latent) {
        out.set_item("H", latent.h.clone())?;
        out.set_item("U", latent.u.clone())?;
        out.set_item("profile", latent.profile.clone())?;
    }
    Ok(out.into_any().unbind())
}

/// OLS and kernel estimates on the illustrative design.
#[pyfunction]
#[pyo3(signature = (preset, n, seed, rho=0.0, bootstrap=ordlab_core::estimate::bootstrap::DEFAULT_REPLICATES))]
fn estimate(py: Python<'_>, preset: &str, n: usize, seed: u64, rho: f64, bootstrap: usize) -> PyResult<Py<PyAny>> {
    let opts = IllustrativeOptions { rho, scale: illustrative_scale(preset)?, n, seed, bootstrap, npreg: Default::default() };
    let report = py.detach(|| ordlab_core::estimate::illustrative(&opts)).map_err(to_py)?;
    to_object(py, &report)
}

/// Runs a full configuration (JSON text) and returns the files written.
#[pyfunction]
fn run(py: Python<'_>, config: &str) -> PyResult<Vec<PathBuf>> {
    let cfg = RunConfig::from_json(config).map_err(to_py)?;
    let outcome = py.detach(|| cli::run(&cfg)).map_err(to_py)?;
    Ok(outcome.files.into_iter().chain([outcome.manifest]).collect())
}

#[pymodule]
pub fn ordlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(weights_report, m)?)?;
    m.add_function(wrap_pyfunction!(ratio_table, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}

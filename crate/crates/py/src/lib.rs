//! Python bindings. Structured results cross the boundary as JSON strings.

use loopfm::models::Checkpoint;
use loopfm::pipeline::{run_ablation, run_seed, run_theory_suite, AblationAxis, ExperimentConfig};
use loopfm::quantization::{fit_kmeans_int4, Codec};
use loopfm::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn config(toml: Option<&str>) -> PyResult<ExperimentConfig> {
    match toml {
        Some(t) => ExperimentConfig::from_toml_str(t).map_err(py_err),
        None => Ok(ExperimentConfig::default()),
    }
}

/// The default experiment config as TOML.
#[pyfunction]
fn default_config() -> String {
    ExperimentConfig::default().to_toml()
}

/// `(auc, logloss, ne)` of scores against 0/1 labels.
#[pyfunction]
fn evaluate(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<(f64, f64, f64)> {
    let r = loopfm::metrics::evaluate(&scores, &labels).map_err(py_err)?;
    Ok((r.auc, r.logloss, r.ne))
}

/// Quantize-dequantize round trip; `int4_kmeans` fits its codebook on `values`.
#[pyfunction]
#[pyo3(signature = (codec, values, seed = 0))]
fn round_trip(codec: &str, values: Vec<f64>, seed: u64) -> PyResult<Vec<f64>> {
    let c = if codec == "int4_kmeans" {
        fit_kmeans_int4(&values, 50, seed).map_err(py_err)?
    } else {
        Codec::parse(codec).map_err(py_err)?
    };
    Ok(c.round_trip(&values))
}

/// Theory-suite summary as JSON.
#[pyfunction]
#[pyo3(signature = (config_toml = None))]
fn verify_theory(py: Python<'_>, config_toml: Option<&str>) -> PyResult<String> {
    let cfg = config(config_toml)?;
    let s = py.detach(|| run_theory_suite(&cfg.theory)).map_err(py_err)?;
    json(&s)
}

/// Four-arm report of one seed as JSON.
#[pyfunction]
#[pyo3(signature = (seed, config_toml = None))]
fn run_experiment_seed(py: Python<'_>, seed: u64, config_toml: Option<&str>) -> PyResult<String> {
    let cfg = config(config_toml)?;
    let r = py.detach(|| run_seed(&cfg, seed)).map_err(py_err)?;
    json(&r)
}

/// One ablation table as JSON.
#[pyfunction]
#[pyo3(signature = (axis, config_toml = None))]
fn ablate(py: Python<'_>, axis: &str, config_toml: Option<&str>) -> PyResult<String> {
    let cfg = config(config_toml)?;
    let axis: AblationAxis = axis.parse().map_err(py_err)?;
    let t = py.detach(|| run_ablation(&cfg, axis)).map_err(py_err)?;
    json(&t)
}

/// Names and shapes of the tensors in an `LFMM` file.
#[pyfunction]
fn checkpoint_shapes(path: &str) -> PyResult<Vec<(String, usize, usize)>> {
    let c = Checkpoint::load(path).map_err(py_err)?;
    Ok(c.params.iter().map(|(n, m)| (n.to_string(), m.rows(), m.cols())).collect())
}

#[pymodule]
fn loopfm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(round_trip, m)?)?;
    m.add_function(wrap_pyfunction!(verify_theory, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_seed, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(checkpoint_shapes, m)?)?;
    Ok(())
}

//! Python bindings: configuration, cohorts, the full pipeline and the
//! numerical building blocks.

use std::path::PathBuf;

use alsfrs_core::config::PipelineConfig;
use alsfrs_core::featurize;
use alsfrs_core::ingest;
use alsfrs_core::solver::{self, ElasticNetParams};
use alsfrs_core::{cli, pipeline, synth, Error, Score};
use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Pipeline configuration; starts from the defaults.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (path=None))]
    fn new(path: Option<PathBuf>) -> PyResult<Self> {
        let inner = match path {
            Some(p) => PipelineConfig::from_file(&p).map_err(py_err)?,
            None => PipelineConfig::default(),
        };
        Ok(PyConfig { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)
    }

    fn get(&self, key: &str) -> Option<String> {
        self.inner.to_document().get(key).map(str::to_owned)
    }

    /// Content hash of the effective configuration.
    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn __str__(&self) -> String {
        self.inner.to_document().to_string()
    }
}

/// An ingested cohort: static records, visits and sensor series.
#[pyclass(name = "Cohort", skip_from_py_object)]
struct PyCohort {
    inner: ingest::Cohort,
}

#[pymethods]
impl PyCohort {
    /// Loads `static.csv`, `visits.csv` and `sensors.csv` from a directory.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let inner = ingest::load_cohort(
            &dir.join("static.csv"),
            &dir.join("visits.csv"),
            &dir.join("sensors.csv"),
        )
        .map_err(py_err)?;
        Ok(PyCohort { inner })
    }

    /// Synthetic cohort from the `synth.*` settings of `config`.
    #[staticmethod]
    fn synthetic(config: &PyConfig) -> PyResult<Self> {
        let sc = config.inner.synth_config().map_err(py_err)?;
        let inner = synth::generate(&sc).and_then(|c| c.to_cohort()).map_err(py_err)?;
        Ok(PyCohort { inner })
    }

    fn patient_ids(&self) -> Vec<String> {
        self.inner.patient_ids()
    }

    fn channels(&self) -> Vec<String> {
        self.inner.channels()
    }

    #[getter]
    fn n_visits(&self) -> usize {
        self.inner.visits.len()
    }

    fn __len__(&self) -> usize {
        self.inner.statics.records.len()
    }
}

/// Runs every stage in memory and returns metrics, winners and predictions.
#[pyfunction]
fn run_pipeline<'py>(py: Python<'py>, cohort: &PyCohort, config: &PyConfig) -> PyResult<Bound<'py, PyDict>> {
    let run = py
        .detach(|| pipeline::run(&cohort.inner, &config.inner))
        .map_err(py_err)?;
    let out = PyDict::new(py);
    let metrics = PyDict::new(py);
    for (q, m) in &run.evaluation.per_question {
        metrics.set_item(q.to_string(), (m.rmse, m.mae, m.n))?;
    }
    let o = run.evaluation.overall;
    metrics.set_item("ALL", (o.rmse, o.mae, o.n))?;
    out.set_item("metrics", metrics)?;
    let winners = PyDict::new(py);
    for q in &run.report.questions {
        winners.set_item(q.question.to_string(), q.winner.to_string())?;
    }
    out.set_item("winners", winners)?;
    let preds: Vec<(String, String, i64, i64, u8, f64, f64)> = run
        .evaluation
        .predictions
        .iter()
        .map(|p| {
            (
                p.patient_id.clone(),
                p.question.to_string(),
                p.window_start,
                p.window_end,
                p.truth.value(),
                p.raw,
                p.emitted,
            )
        })
        .collect();
    out.set_item("predictions", preds)?;
    out.set_item("train_patients", run.train_patients)?;
    out.set_item("holdout_patients", run.holdout_patients)?;
    Ok(out)
}

/// Rounds and clips a raw prediction onto the 0..=4 scale.
#[pyfunction]
fn postprocess(raw: f64) -> PyResult<u8> {
    alsfrs_core::postprocess(raw).map(Score::value).map_err(py_err)
}

/// (rmse, mae, n) of predictions against integer truths.
#[pyfunction]
fn compute_metrics(truth: Vec<u8>, predicted: Vec<f64>) -> PyResult<(f64, f64, usize)> {
    if truth.len() != predicted.len() {
        return Err(PyValueError::new_err("truth and predicted differ in length"));
    }
    let pairs = truth
        .into_iter()
        .map(|t| Score::new(t).map_err(py_err))
        .collect::<PyResult<Vec<_>>>()?
        .into_iter()
        .zip(predicted);
    let m = alsfrs_core::compute_metrics(pairs).map_err(py_err)?;
    Ok((m.rmse, m.mae, m.n))
}

/// (rho, two-sided p) of the Spearman rank correlation.
#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64)> {
    featurize::spearman_test(&x, &y)
        .map(|r| (r.rho, r.p_value))
        .map_err(|e| PyValueError::new_err(format!("{e:?}")))
}

/// Benjamini–Yekutieli adjusted p-values, in input order.
#[pyfunction]
fn by_adjust(p: Vec<f64>) -> Vec<f64> {
    featurize::by_adjust(&p)
}

/// Elastic-net fit on raw rows; returns (intercept, per-feature coefficients on the raw scale).
#[pyfunction]
#[pyo3(signature = (x, y, lam, alpha=1.0, tol=1e-9, max_iter=100_000))]
fn fit_elastic_net(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    lam: f64,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> PyResult<(f64, Vec<f64>)> {
    let p = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("rows of x differ in length"));
    }
    let flat: Vec<f64> = x.into_iter().flatten().collect();
    let arr = Array2::from_shape_vec((flat.len() / p.max(1), p), flat)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    let params = ElasticNetParams {
        lambda: lam,
        alpha,
        tol,
        max_iter,
    };
    let m = solver::fit(arr.view(), &y, &names, &params).map_err(py_err)?;
    let raw: Vec<f64> = m
        .coefficients
        .iter()
        .zip(&m.feature_stds)
        .map(|(c, s)| if *s > 0.0 { c / s } else { 0.0 })
        .collect();
    Ok((m.intercept, raw))
}

/// Runs the command-line driver with `args` (without the program name); returns the exit code.
#[pyfunction]
fn main(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("alsfrs".to_string()).chain(args).collect();
    py.detach(|| cli::run(argv))
}

#[pymodule]
fn alsfrs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyCohort>()?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(postprocess, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(by_adjust, m)?)?;
    m.add_function(wrap_pyfunction!(fit_elastic_net, m)?)?;
    m.add_function(wrap_pyfunction!(main, m)?)?;
    Ok(())
}

//! Python bindings: classifier heads, adaptation configs, sessions, synthetic
//! streams and the binary file formats.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use dota_core::eval::{improvement_curve, Summary, DEFAULT_WINDOW};
use dota_core::stream_io::{self, RawClassifier, RawRecord};
use dota_core::synth::{bayes_oracle_accuracy, generate, SynthConfig, SynthSpec};
use dota_core::{zeroshot, AdaptConfig, ClassifierSpec, DotaError, EmbeddingRecord, FeedbackMode, Session};

create_exception!(dota, AdaptError, PyException, "Numerical, format or feedback failure inside the engine.");

fn err(e: DotaError) -> PyErr {
    match e {
        DotaError::Io(io) => PyOSError::new_err(io.to_string()),
        e @ (DotaError::Config { .. }
        | DotaError::Ingestion(_)
        | DotaError::Dimension { .. }
        | DotaError::Compatibility(_)
        | DotaError::Empty(_)) => PyValueError::new_err(e.to_string()),
        e => AdaptError::new_err(e.to_string()),
    }
}

/// Serializes through JSON into plain Python dicts and lists.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| AdaptError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Frozen zero-shot head: class names, unit weight vectors and a temperature.
#[pyclass(name = "Classifier", module = "dota", frozen)]
pub struct PyClassifier {
    inner: ClassifierSpec,
}

#[pymethods]
impl PyClassifier {
    #[new]
    #[pyo3(signature = (class_names, weights, temperature = 0.01))]
    fn new(class_names: Vec<String>, weights: Vec<Vec<f64>>, temperature: f64) -> PyResult<Self> {
        Ok(Self { inner: ClassifierSpec::new(class_names, weights, temperature).map_err(err)? })
    }

    /// Reads a `.dcls` file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: stream_io::read_classifier(path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        stream_io::write_classifier_file(path, &RawClassifier::from_spec(&self.inner)).map_err(err)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names().to_vec()
    }

    #[getter]
    fn temperature(&self) -> f64 {
        self.inner.temperature()
    }

    #[getter]
    fn weights(&self) -> Vec<Vec<f64>> {
        self.inner.weights().iter().map(|w| w.iter().copied().collect()).collect()
    }

    /// Zero-shot class probabilities for one (unnormalized) embedding.
    fn zero_shot(&self, embedding: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = dota_core::model::normalize(&embedding).map_err(err)?;
        Ok(zeroshot::zs_posterior(&x, &self.inner).map_err(err)?.probs().to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Classifier(num_classes={}, dim={}, temperature={})",
            self.inner.num_classes(),
            self.inner.dim(),
            self.inner.temperature()
        )
    }
}

#[pyclass(name = "AdaptConfig", module = "dota", frozen)]
pub struct PyAdaptConfig {
    inner: AdaptConfig,
}

#[pymethods]
impl PyAdaptConfig {
    #[new]
    #[pyo3(signature = (
        sigma2 = 0.002,
        epsilon = 1e-4,
        rho = 0.01,
        eta = 0.3,
        gamma = 0.05,
        feedback = "none",
        strategy = "confidence",
        cov = "per-class",
        resp_floor = 1e-3,
        precision_interval = 1,
        warmup = 0,
        seed = 42,
        freeze_covariance = false,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        sigma2: f64,
        epsilon: f64,
        rho: f64,
        eta: f64,
        gamma: f64,
        feedback: &str,
        strategy: &str,
        cov: &str,
        resp_floor: f64,
        precision_interval: u64,
        warmup: u64,
        seed: u64,
        freeze_covariance: bool,
    ) -> PyResult<Self> {
        let inner = AdaptConfig {
            sigma2,
            epsilon,
            rho,
            eta,
            gamma,
            cov_backend: cov.parse().map_err(err)?,
            responsibility_floor: resp_floor,
            precision_refresh_interval: precision_interval,
            uncertainty_warmup: warmup,
            feedback_mode: feedback.parse().map_err(err)?,
            strategy: strategy.parse().map_err(err)?,
            seed,
            freeze_covariance,
        };
        Ok(Self { inner: inner.validate().map_err(err)? })
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn feedback(&self) -> String {
        self.inner.feedback_mode.to_string()
    }

    #[getter]
    fn strategy(&self) -> String {
        self.inner.strategy.to_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("AdaptConfig({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

type PyRecord = (String, Vec<f64>, Option<usize>);

/// One adaptation session. Human feedback is only available through `dota serve`.
#[pyclass(name = "Session", module = "dota")]
pub struct PySession {
    inner: Session,
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (classifier, config = None))]
    fn new(classifier: &PyClassifier, config: Option<&PyAdaptConfig>) -> PyResult<Self> {
        let cfg = config.map_or_else(AdaptConfig::default, |c| c.inner.clone());
        if cfg.feedback_mode == FeedbackMode::Human {
            return Err(PyValueError::new_err("human feedback needs a labeler; use `dota serve`"));
        }
        Ok(Self { inner: Session::new(classifier.inner.clone(), cfg).map_err(err)? })
    }

    /// Processes one sample and returns its prediction record.
    #[pyo3(signature = (id, embedding, label = None))]
    fn process<'py>(
        &mut self,
        py: Python<'py>,
        id: String,
        embedding: Vec<f64>,
        label: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let record = EmbeddingRecord::new(id, &embedding, label, None).map_err(err)?;
        let outcome = self.inner.process_sample(&record).map_err(err)?;
        to_py(py, &outcome.record)
    }

    /// Processes `(id, embedding, label)` tuples and returns the summary.
    #[pyo3(signature = (records, window = DEFAULT_WINDOW))]
    fn run<'py>(&mut self, py: Python<'py>, records: Vec<PyRecord>, window: usize) -> PyResult<Bound<'py, PyAny>> {
        let session = &mut self.inner;
        let report = py
            .detach(|| {
                let items =
                    records.into_iter().map(|(id, v, label)| EmbeddingRecord::new(id, &v, label, None));
                session.run_stream(items, window)
            })
            .map_err(err)?;
        to_py(py, &report.summary)
    }

    /// Processes a `.demb` stream and returns the summary.
    #[pyo3(signature = (path, window = DEFAULT_WINDOW))]
    fn run_file<'py>(&mut self, py: Python<'py>, path: PathBuf, window: usize) -> PyResult<Bound<'py, PyAny>> {
        let session = &mut self.inner;
        let report = py
            .detach(|| {
                let records = stream_io::read_stream_for(&path, session.spec())?;
                session.run_stream(records, window)
            })
            .map_err(err)?;
        to_py(py, &report.summary)
    }

    fn log<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.log())
    }

    #[pyo3(signature = (window = DEFAULT_WINDOW))]
    fn summary<'py>(&self, py: Python<'py>, window: usize) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &Summary::from_log(self.inner.log(), window).map_err(err)?)
    }

    /// Trailing-window accuracy gain over zero-shot as `(index, gain)` pairs.
    #[pyo3(signature = (window = DEFAULT_WINDOW))]
    fn improvement_curve(&self, window: usize) -> PyResult<Vec<(u64, f64)>> {
        improvement_curve(self.inner.log(), window).map_err(err)
    }

    #[getter]
    fn position(&self) -> u64 {
        self.inner.state().position
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.inner.gda().means().iter().map(|m| m.iter().copied().collect()).collect()
    }

    #[getter]
    fn counts(&self) -> Vec<f64> {
        self.inner.gda().counts().to_vec()
    }

    /// Shared precision matrix as a list of rows.
    fn precision(&self) -> Vec<Vec<f64>> {
        let p = self.inner.gda().precision();
        p.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    #[pyo3(signature = (path, window = DEFAULT_WINDOW))]
    fn write_report(&self, path: PathBuf, window: usize) -> PyResult<()> {
        let report = self.inner.report(window, Default::default()).map_err(err)?;
        stream_io::write_report_file(path, &report).map_err(err)
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        stream_io::write_checkpoint_file(path, self.inner.state()).map_err(err)
    }

    #[staticmethod]
    fn load_checkpoint(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Session::from_state(stream_io::read_checkpoint_file(path).map_err(err)?) })
    }
}

/// L2-normalizes a vector.
#[pyfunction]
fn normalize(v: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(dota_core::model::normalize(&v).map_err(err)?.iter().copied().collect())
}

/// Raw `(id, values, label, asset_uri)` tuples from a `.demb` file.
#[pyfunction]
fn read_stream(path: PathBuf) -> PyResult<Vec<(String, Vec<f32>, Option<u32>, Option<String>)>> {
    stream_io::open_stream(path)
        .map_err(err)?
        .map(|r| r.map(|r| (r.id, r.values, r.label, r.asset_uri)).map_err(err))
        .collect()
}

#[pyfunction]
#[pyo3(signature = (path, records))]
fn write_stream(path: PathBuf, records: Vec<(String, Vec<f32>, Option<u32>)>) -> PyResult<()> {
    let dim = records.first().map_or(0, |r| r.1.len());
    let raw: Vec<RawRecord> = records
        .into_iter()
        .map(|(id, values, label)| RawRecord { id, values, label, asset_uri: None })
        .collect();
    stream_io::write_stream_file(path, dim as u32, &raw).map_err(err)
}

/// Draws a synthetic stream. Returns a dict with `classifier`, `records`,
/// `truth` and `bayes_oracle_acc`; also writes PREFIX.demb/.dcls/.truth.json
/// when `out_prefix` is given.
#[pyfunction]
#[pyo3(signature = (k = 5, d = 16, n = 5000, perturb_deg = 25.0, aniso = true, seed = 7, out_prefix = None))]
#[allow(clippy::too_many_arguments)]
fn synth<'py>(
    py: Python<'py>,
    k: usize,
    d: usize,
    n: usize,
    perturb_deg: f64,
    aniso: bool,
    seed: u64,
    out_prefix: Option<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SynthConfig { k, dim: d, n_samples: n, perturbation_deg: perturb_deg, anisotropic: aniso, seed, ..SynthConfig::default() };
    let out = SynthSpec::from_config(&cfg).and_then(|s| generate(&s)).map_err(err)?;
    let ingested: Vec<EmbeddingRecord> = out.records.iter().map(RawRecord::ingest).collect::<Result<_, _>>().map_err(err)?;
    let bayes = bayes_oracle_accuracy(&ingested, &out.truth).map_err(err)?;
    if let Some(prefix) = &out_prefix {
        stream_io::write_stream_file(format!("{prefix}.demb"), d as u32, &out.records).map_err(err)?;
        stream_io::write_classifier_file(format!("{prefix}.dcls"), &out.classifier).map_err(err)?;
        let truth = serde_json::to_vec_pretty(&out.truth).map_err(|e| AdaptError::new_err(e.to_string()))?;
        std::fs::write(format!("{prefix}.truth.json"), truth)?;
    }
    // raw values, so feeding them back matches a run over the written file
    let records: Vec<PyRecord> = out
        .records
        .into_iter()
        .map(|r| (r.id, r.values.into_iter().map(f64::from).collect(), r.label.map(|l| l as usize)))
        .collect();
    let dict = PyDict::new(py);
    dict.set_item("classifier", PyClassifier { inner: out.classifier.to_spec().map_err(err)? })?;
    dict.set_item("records", records)?;
    dict.set_item("truth", to_py(py, &out.truth)?)?;
    dict.set_item("bayes_oracle_acc", bayes)?;
    Ok(dict)
}

#[pymodule]
pub fn dota(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyClassifier>()?;
    m.add_class::<PyAdaptConfig>()?;
    m.add_class::<PySession>()?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(read_stream, m)?)?;
    m.add_function(wrap_pyfunction!(write_stream, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add("AdaptError", m.py().get_type::<AdaptError>())?;
    Ok(())
}

//! Python module `tllm`: configuration, training, export, student
//! inference, evaluation and the metric/analysis helpers.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tllm_core::config::{desk_config, Precision, RunConfig};
use tllm_core::data::{self, SynthKind, SynthParams};
use tllm_core::distill::EpochRecord;
use tllm_core::eval::{self, EvalOptions, MetricReport};
use tllm_core::model::StudentModel;
use tllm_core::numerics::Tensor;
use tllm_core::pipeline::{self, EvalModel};
use tllm_core::teacher::{select_capacity as select, CapacitySchedule};
use tllm_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Refused(_) | Error::Shape { .. } | Error::Parse { .. } => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for tllm_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Run configuration. Construct from JSON text, a file, or the desk preset.
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(text) => RunConfig::from_json(text).py()?,
            None => RunConfig::default(),
        };
        Ok(PyRunConfig { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyRunConfig { inner: RunConfig::load(&path).py()? })
    }

    /// The desk-scale synthetic experiment.
    #[staticmethod]
    fn desk() -> Self {
        PyRunConfig { inner: desk_config() }
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py()
    }

    /// Every violated constraint.
    fn problems(&self) -> Vec<String> {
        self.inner.problems()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir.clone()
    }

    #[setter]
    fn set_output_dir(&mut self, v: PathBuf) {
        self.inner.output_dir = v;
    }

    #[getter]
    fn max_epochs(&self) -> usize {
        self.inner.optim.max_epochs
    }

    #[setter]
    fn set_max_epochs(&mut self, v: usize) {
        self.inner.optim.max_epochs = v;
    }

    #[getter]
    fn threads(&self) -> usize {
        self.inner.threads
    }

    #[setter]
    fn set_threads(&mut self, v: usize) {
        self.inner.threads = v;
    }

    /// `(lambda1, lambda2, lambda3)`.
    #[getter]
    fn loss_weights(&self) -> (f64, f64, f64) {
        let w = self.inner.loss.weights;
        (w.lambda1, w.lambda2, w.lambda3)
    }

    #[setter]
    fn set_loss_weights(&mut self, w: (f64, f64, f64)) {
        let l = &mut self.inner.loss.weights;
        (l.lambda1, l.lambda2, l.lambda3) = w;
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(seed={}, output_dir={:?}, epochs={})",
            self.inner.seed, self.inner.output_dir, self.inner.optim.max_epochs
        )
    }
}

fn record_dict<'py>(py: Python<'py>, r: &EpochRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", r.epoch)?;
    for (k, v) in [
        ("l_teach", r.l_teach),
        ("l_imit", r.l_imit),
        ("l_guide", r.l_guide),
        ("l_stud", r.l_stud),
        ("total", r.total),
        ("val_teacher", r.val_teacher),
        ("val_student", r.val_student),
    ] {
        d.set_item(k, v)?;
    }
    Ok(d)
}

fn report_dict<'py>(py: Python<'py>, r: &MetricReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("dataset", &r.dataset)?;
    d.set_item("model", &r.model)?;
    d.set_item("protocol", &r.protocol)?;
    d.set_item("horizon", r.horizon)?;
    d.set_item("samples", r.samples)?;
    d.set_item("mse", r.mse)?;
    d.set_item("mae", r.mae)?;
    d.set_item("smape", r.smape)?;
    d.set_item("mase", r.mase)?;
    d.set_item("owa", r.owa)?;
    Ok(d)
}

/// Train per `config`; returns the run summary with the epoch history.
#[pyfunction]
#[pyo3(signature = (config, resume = false))]
fn train<'py>(py: Python<'py>, config: &PyRunConfig, resume: bool) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    let summary = py
        .detach(move || match cfg.precision {
            Precision::F32 => pipeline::train_run::<f32>(&cfg, resume),
            Precision::F64 => pipeline::train_run::<f64>(&cfg, resume),
        })
        .py()?;
    let d = PyDict::new(py);
    d.set_item("output_dir", summary.output_dir)?;
    d.set_item("best_epoch", summary.best_epoch)?;
    d.set_item("stopped_early", summary.stopped_early)?;
    d.set_item("dataset", summary.dataset.name)?;
    let history = summary.history.iter().map(|r| record_dict(py, r)).collect::<PyResult<Vec<_>>>()?;
    d.set_item("history", history)?;
    Ok(d)
}

/// Write the student-only artifact of a finished checkpoint. Returns
/// `(total, trainable, removed)` parameter counts.
#[pyfunction]
#[pyo3(signature = (checkpoint, out, merge_lora = false))]
fn export(checkpoint: PathBuf, out: PathBuf, merge_lora: bool) -> PyResult<(usize, usize, usize)> {
    let c = pipeline::export::<f64>(&checkpoint, &out, merge_lora).py()?;
    Ok((c.total, c.trainable, c.removed))
}

/// Score a model on the configured dataset's test split. `model` is
/// `student` (needs `artifact`), `oracle`, `naive` or `naive2`.
#[pyfunction]
#[pyo3(signature = (config, model = "student", artifact = None, horizons = None))]
fn evaluate<'py>(
    py: Python<'py>,
    config: &PyRunConfig,
    model: &str,
    artifact: Option<String>,
    horizons: Option<Vec<usize>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = &config.inner;
    let m = match model {
        "student" => EvalModel::Artifact(
            artifact.ok_or_else(|| PyValueError::new_err("artifact is required for the student model"))?,
        ),
        "oracle" => EvalModel::Oracle,
        "naive" => EvalModel::RepeatLast,
        "naive2" => EvalModel::Naive2,
        other => return Err(PyValueError::new_err(format!("unknown model `{other}`"))),
    };
    let ds = cfg.evaluation_dataset().py()?;
    let horizons = horizons.unwrap_or_else(|| vec![cfg.model.horizon]);
    let base = EvalOptions {
        protocol: cfg.protocol,
        lookback: cfg.model.lookback,
        horizon: cfg.model.horizon,
        stride: cfg.data.stride,
        season: cfg.loss.season,
        denormalize: cfg.denormalize,
    };
    let reports = pipeline::evaluate_run::<f64>(&m, &ds, &horizons, &base).py()?;
    reports.iter().map(|r| report_dict(py, r)).collect()
}

/// Heatmap CSVs from a run directory's attention trace.
#[pyfunction]
fn analyze(run: PathBuf) -> PyResult<Vec<PathBuf>> {
    pipeline::analyze_run(&run).py()
}

/// Exported student artifact.
#[pyclass(name = "Student")]
struct PyStudent {
    inner: StudentModel<f64>,
}

#[pymethods]
impl PyStudent {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyStudent { inner: StudentModel::load(&path).py()? })
    }

    #[getter]
    fn lookback(&self) -> usize {
        self.inner.config.lookback
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.config.horizon
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.config.channels
    }

    #[getter]
    fn merged(&self) -> bool {
        self.inner.merged
    }

    fn parameter_count(&self) -> usize {
        self.inner.store.count_elements(|_| true)
    }

    /// `x[b][t][c]` in normalized units, shape `[B, lookback, channels]`;
    /// returns `[B, horizon, channels]`.
    fn predict(&self, x: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let (l, c, t) = (self.lookback(), self.channels(), self.horizon());
        if x.iter().any(|w| w.len() != l || w.iter().any(|row| row.len() != c)) {
            return Err(PyValueError::new_err(format!("every window must be {l} rows of {c} values")));
        }
        let flat: Vec<f64> = x.iter().flatten().flatten().copied().collect();
        let input = Tensor::from_f64(&[x.len(), l, c], &flat).py()?;
        let out = self.inner.predict(&input).py()?.into_data();
        Ok(out.chunks(t * c).map(|w| w.chunks(c).map(<[f64]>::to_vec).collect()).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Student(lookback={}, horizon={}, channels={}, merged={})",
            self.lookback(),
            self.horizon(),
            self.channels(),
            self.merged()
        )
    }
}

/// Synthetic series as `length` rows of `channels` values.
#[pyfunction]
#[pyo3(signature = (kind, length, channels, seed = 0, amplitude = 1.0, period = 24.0, trend = 0.0, noise = 0.0, step_at = None))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    kind: &str,
    length: usize,
    channels: usize,
    seed: u64,
    amplitude: f64,
    period: f64,
    trend: f64,
    noise: f64,
    step_at: Option<usize>,
) -> PyResult<Vec<Vec<f64>>> {
    let kind: SynthKind = kind.parse().py()?;
    let p = SynthParams { amplitude, period, trend, noise, step_at };
    let ds = data::synthesize(kind, seed, length, channels, &p).py()?;
    Ok(ds.values.chunks(channels).map(<[f64]>::to_vec).collect())
}

#[pyfunction]
fn mse(p: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    eval::mse(&p, &y).py()
}

#[pyfunction]
fn mae(p: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    eval::mae(&p, &y).py()
}

#[pyfunction]
fn smape(p: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    eval::smape(&p, &y).py()
}

#[pyfunction]
#[pyo3(signature = (p, y, insample, m = 1))]
fn mase(p: Vec<f64>, y: Vec<f64>, insample: Vec<f64>, m: usize) -> PyResult<f64> {
    eval::mase(&p, &y, &insample, m).py()
}

#[pyfunction]
fn owa(smape: f64, mase: f64, naive2_smape: f64, naive2_mase: f64) -> PyResult<f64> {
    eval::owa(smape, mase, naive2_smape, naive2_mase).py()
}

#[pyfunction]
fn naive2_forecast(insample: Vec<f64>, m: usize, horizon: usize) -> PyResult<Vec<f64>> {
    eval::naive2_forecast(&insample, m, horizon).py()
}

/// Linear CKA of two row-major matrices with `n` rows each.
#[pyfunction]
fn cka(x: Vec<f64>, y: Vec<f64>, n: usize) -> PyResult<f64> {
    tllm_core::analysis::cka(&x, &y, n).py()
}

/// Spectral capacity for `horizon` from `(horizon, capacity)` pairs.
#[pyfunction]
fn select_capacity(horizon: usize, schedule: Vec<(usize, usize)>) -> PyResult<usize> {
    Ok(select(horizon, &CapacitySchedule::new(schedule).py()?))
}

#[pymodule]
fn tllm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyStudent>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(export, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(smape, m)?)?;
    m.add_function(wrap_pyfunction!(mase, m)?)?;
    m.add_function(wrap_pyfunction!(owa, m)?)?;
    m.add_function(wrap_pyfunction!(naive2_forecast, m)?)?;
    m.add_function(wrap_pyfunction!(cka, m)?)?;
    m.add_function(wrap_pyfunction!(select_capacity, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

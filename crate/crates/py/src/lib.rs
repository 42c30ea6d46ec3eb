//! Python module `aeye`. Structured results come back as plain dicts and
//! lists; grids travel as `bytes` of row-major class ids.

use aeye_core::arbitration::ControlCommand;
use aeye_core::capture::{self, CornerCaseRecord};
use aeye_core::curation::load_dataset;
use aeye_core::eval::{campaign_stats as stats_of, confusion_on, CampaignLog, ConfusionAccumulator, Score};
use aeye_core::experiment::run_experiment;
use aeye_core::grid::{ClassId, SemanticGrid};
use aeye_core::perception::{degrade as degrade_grid, train, DegradationParams, PerceiverModel};
use aeye_core::service::campaign::{run_and_persist, run_headless_campaign};
use aeye_core::service::config::{SessionConfig, StopCondition};
use aeye_core::world::{ms_to_kmh, WorldState, DEFAULT_DT};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use std::path::PathBuf;

fn runtime(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn value(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(runtime)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn class_named(name: &str) -> PyResult<ClassId> {
    ClassId::ALL.into_iter().find(|c| c.name() == name).ok_or_else(|| value(format!("unknown class {name:?}")))
}

fn grid(cells: &[u8], rows: usize, cols: usize) -> PyResult<SemanticGrid> {
    SemanticGrid::from_cells(rows, cols, cells.to_vec()).map_err(value)
}

/// A validated session config. Every field is optional in the JSON.
#[pyclass(name = "SessionConfig", module = "aeye", from_py_object)]
#[derive(Clone)]
struct PySessionConfig {
    inner: SessionConfig,
}

#[pymethods]
impl PySessionConfig {
    #[new]
    #[pyo3(signature = (json = "{}"))]
    fn new(json: &str) -> PyResult<Self> {
        Ok(Self { inner: SessionConfig::from_json(json).map_err(value)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: SessionConfig::load(&path).map_err(value)? })
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self { inner: self.inner.clone().with_seed(seed) }
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!("SessionConfig(seed={}, mode={:?})", self.inner.world.seed, self.inner.mode)
    }
}

fn config_or_default(cfg: Option<PySessionConfig>) -> SessionConfig {
    cfg.map(|c| c.inner).unwrap_or_default()
}

/// One captured corner case.
#[pyclass(name = "CornerCaseRecord", module = "aeye", frozen)]
struct PyRecord {
    inner: CornerCaseRecord,
}

#[pymethods]
impl PyRecord {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: capture::load_dir(&dir).map_err(runtime)? })
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn cause(&self) -> &'static str {
        self.inner.event.cause.as_str()
    }

    #[getter]
    fn odometer_km(&self) -> f64 {
        self.inner.event.odometer_km
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }

    fn __len__(&self) -> usize {
        self.inner.frames.len()
    }

    fn span_seconds(&self) -> f64 {
        self.inner.span_seconds()
    }

    fn tick_indices(&self) -> Vec<u64> {
        self.inner.frames.iter().map(|f| f.tick_index).collect()
    }

    fn truth<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyBytes>> {
        let f = self.inner.frames.get(index).ok_or_else(|| value(format!("frame {index} out of range")))?;
        Ok(PyBytes::new(py, f.truth.as_bytes()))
    }

    fn predicted<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyBytes>> {
        let f = self.inner.frames.get(index).ok_or_else(|| value(format!("frame {index} out of range")))?;
        Ok(PyBytes::new(py, f.predicted.as_bytes()))
    }

    fn __repr__(&self) -> String {
        format!("CornerCaseRecord(id={:?}, cause={}, frames={})", self.inner.id, self.cause(), self.inner.frames.len())
    }
}

/// The driving world, stepped by hand.
#[pyclass(name = "World", module = "aeye", unsendable)]
struct PyWorld {
    inner: WorldState,
}

#[pymethods]
impl PyWorld {
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(config: Option<PySessionConfig>) -> PyResult<Self> {
        Ok(Self { inner: WorldState::init(config_or_default(config).world).map_err(value)? })
    }

    #[pyo3(signature = (steer = 0.0, throttle = 0.0, brake = 0.0))]
    fn step(&mut self, steer: f64, throttle: f64, brake: f64) -> PyResult<()> {
        self.inner.step(&ControlCommand { steer, throttle, brake }, DEFAULT_DT).map_err(value)
    }

    /// Ground-truth label grid as `(bytes, rows, cols)`.
    fn render<'py>(&self, py: Python<'py>) -> (Bound<'py, PyBytes>, usize, usize) {
        let g = self.inner.render_labels();
        (PyBytes::new(py, g.as_bytes()), g.rows(), g.cols())
    }

    #[getter]
    fn tick(&self) -> u64 {
        self.inner.tick
    }

    #[getter]
    fn speed_kmh(&self) -> f64 {
        ms_to_kmh(self.inner.ego.speed)
    }

    #[getter]
    fn odometer_km(&self) -> f64 {
        self.inner.odometer_km
    }

    #[getter]
    fn collision(&self) -> bool {
        self.inner.collision
    }
}

/// Running tp/fp/fn counts per class.
#[pyclass(name = "Confusion", module = "aeye")]
#[derive(Default)]
struct PyConfusion {
    inner: ConfusionAccumulator,
}

#[pymethods]
impl PyConfusion {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    fn accumulate(&mut self, predicted: &[u8], truth: &[u8], rows: usize, cols: usize) -> PyResult<()> {
        self.inner.accumulate(&grid(predicted, rows, cols)?, &grid(truth, rows, cols)?).map_err(value)
    }

    /// `None` for a class that never occurred.
    fn iou(&self, class_name: &str) -> PyResult<Option<f64>> {
        Ok(self.inner.iou(class_named(class_name)?))
    }

    fn miou(&self) -> Option<f64> {
        self.inner.miou()
    }
}

/// A trained per-cell classifier.
#[pyclass(name = "PerceiverModel", module = "aeye", frozen)]
struct PyModel {
    inner: PerceiverModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        Ok(Self { inner: PerceiverModel::from_bytes(&bytes).map_err(value)? })
    }

    /// Train on a dataset directory written by `aeye curate`.
    #[staticmethod]
    #[pyo3(signature = (dataset_dir, config = None))]
    fn train(py: Python<'_>, dataset_dir: PathBuf, config: Option<PySessionConfig>) -> PyResult<Self> {
        let cfg = config_or_default(config);
        let ds = load_dataset(&dataset_dir).map_err(runtime)?;
        let model = py.detach(|| train(&ds, &cfg.train)).map_err(runtime)?;
        Ok(Self { inner: model })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, self.inner.to_bytes()).map_err(|e| runtime(format!("{}: {e}", path.display())))
    }

    /// `{"pedestrian_iou": ..., "miou": ...}` on a saved dataset.
    fn evaluate<'py>(&self, py: Python<'py>, dataset_dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
        let ds = load_dataset(&dataset_dir).map_err(runtime)?;
        let acc = confusion_on(&self.inner, &ds).map_err(runtime)?;
        to_py(py, &Score::of(&acc))
    }
}

/// Corrupt a label grid the way the semantic driver's channel does.
#[pyfunction]
#[pyo3(signature = (cells, rows, cols, quality, seed = 0))]
fn degrade<'py>(py: Python<'py>, cells: &[u8], rows: usize, cols: usize, quality: f64, seed: u64) -> PyResult<Bound<'py, PyBytes>> {
    let params = DegradationParams { quality, seed, ..DegradationParams::default() };
    params.validate().map_err(value)?;
    Ok(PyBytes::new(py, degrade_grid(&grid(cells, rows, cols)?, &params).as_bytes()))
}

/// Run a headless campaign. With `out`, the log and records are written
/// there as `aeye campaign` would. Returns the campaign statistics plus the
/// captured records.
#[pyfunction]
#[pyo3(signature = (config = None, max_km = None, max_cc = None, max_minutes = None, out = None))]
fn run_campaign<'py>(
    py: Python<'py>,
    config: Option<PySessionConfig>,
    max_km: Option<f64>,
    max_cc: Option<usize>,
    max_minutes: Option<f64>,
    out: Option<PathBuf>,
) -> PyResult<(Bound<'py, PyAny>, Vec<PyRecord>)> {
    let cfg = config_or_default(config);
    let stop = if max_km.is_some() || max_cc.is_some() || max_minutes.is_some() { StopCondition { max_km, max_cc, max_minutes } } else { cfg.stop };
    stop.validate().map_err(value)?;
    let output = py
        .detach(|| match &out {
            Some(dir) => run_and_persist(&cfg, &stop, dir).map(|(o, _)| o),
            None => run_headless_campaign(&cfg, &stop),
        })
        .map_err(runtime)?;
    let stats = output.stats().map_err(runtime)?;
    Ok((to_py(py, &stats)?, output.records.into_iter().map(|inner| PyRecord { inner }).collect()))
}

/// Interval statistics for corner cases at the given odometer readings.
#[pyfunction]
fn campaign_stats<'py>(py: Python<'py>, events_km: Vec<f64>, distance_km: f64) -> PyResult<Bound<'py, PyAny>> {
    let log = CampaignLog::from_km(&events_km, distance_km);
    to_py(py, &stats_of(&log).map_err(value)?)
}

/// The three-way training comparison; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn compare<'py>(py: Python<'py>, config: Option<PySessionConfig>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config_or_default(config);
    let outcome = py.detach(|| run_experiment(&cfg, &cfg.experiment)).map_err(runtime)?;
    to_py(py, &outcome.report)
}

#[pymodule]
fn aeye(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CLASS_NAMES", ClassId::ALL.map(|c| c.name()).to_vec())?;
    m.add_class::<PySessionConfig>()?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PyWorld>()?;
    m.add_class::<PyConfusion>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(run_campaign, m)?)?;
    m.add_function(wrap_pyfunction!(campaign_stats, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}

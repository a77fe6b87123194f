//! Python bindings: scenario construction, scan execution and the
//! post-scan metrics, driven in-process from Python.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spinescan::imaging;
use spinescan::reconstruction::{deviation_stats, measure_angle, PathSource, PathStats};
use spinescan::scanner::ScanLog;
use spinescan::scenario::{run_detector_eval, Scenario as CoreScenario};
use spinescan::tracking::{kf_step, KalmanConfig, KalmanState};

fn to_py_err(e: spinescan::Error) -> PyErr {
    match e {
        spinescan::Error::Io(inner) => PyRuntimeError::new_err(inner.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn stats_dict<'py>(py: Python<'py>, s: &PathStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean_dev_px", s.mean_dev_px)?;
    d.set_item("std_px", s.std_px)?;
    d.set_item("mean_abs_dev_px", s.mean_abs_dev_px)?;
    d.set_item("mean_dev_mm", s.mean_dev_mm)?;
    d.set_item("std_mm", s.std_mm)?;
    d.set_item("mean_abs_dev_mm", s.mean_abs_dev_mm)?;
    Ok(d)
}

/// A scan scenario: phantom geometry, control gains, perception and
/// output settings, plus the seed all randomness derives from.
#[pyclass(name = "Scenario", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: CoreScenario,
}

#[pymethods]
impl PyScenario {
    /// Default scenario: 10 mm lateral curve over a 200 mm wavelength.
    #[staticmethod]
    fn default() -> Self {
        PyScenario {
            inner: CoreScenario::default(),
        }
    }

    /// High-kyphosis phantom used for the region-specific pitch study.
    #[staticmethod]
    fn high_kyphosis() -> Self {
        PyScenario {
            inner: CoreScenario::high_kyphosis(),
        }
    }

    /// Parse a scenario from its JSON text.
    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        Ok(PyScenario {
            inner: CoreScenario::from_json(json).map_err(to_py_err)?,
        })
    }

    /// Load a scenario file.
    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        Ok(PyScenario {
            inner: spinescan::scenario::parse_scenario(std::path::Path::new(path))
                .map_err(to_py_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    /// Amend fields through a JSON merge, e.g.
    /// `scn.merged('{"phantom": {"curve_amplitude": 0.015}}')`.
    fn merged(&self, json_patch: &str) -> PyResult<Self> {
        let mut base: serde_json::Value = serde_json::from_str(&self.inner.to_json())
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let patch: serde_json::Value =
            serde_json::from_str(json_patch).map_err(|e| PyValueError::new_err(e.to_string()))?;
        merge_json(&mut base, &patch);
        PyScenario::from_json(&base.to_string())
    }

    /// Analytic deformity angle of the phantom, degrees.
    fn ground_truth_angle(&self) -> f64 {
        self.inner.phantom.ground_truth_angle()
    }

    /// Run the robotic scan.
    fn run(&self, py: Python<'_>) -> PyResult<PyScanResult> {
        let scn = self.inner.clone();
        let log = py
            .detach(move || scn.run())
            .map_err(to_py_err)?;
        Ok(PyScanResult {
            log,
            scenario: self.inner.clone(),
        })
    }

    /// Run the simulated manual (noisy-hand) scan.
    fn run_manual(&self, py: Python<'_>) -> PyResult<PyScanResult> {
        let scn = self.inner.clone();
        let log = py
            .detach(move || scn.run_manual())
            .map_err(to_py_err)?;
        Ok(PyScanResult {
            log,
            scenario: self.inner.clone(),
        })
    }

    /// Detector metrics on a synthetic sweep; returns a dict.
    fn detector_eval<'py>(&self, py: Python<'py>, frames: usize) -> PyResult<Bound<'py, PyDict>> {
        let scn = self.inner.clone();
        let (report, _csv) = py
            .detach(move || run_detector_eval(&scn, frames))
            .map_err(to_py_err)?;
        let d = PyDict::new(py);
        d.set_item("frames", report.frames)?;
        d.set_item("pck", report.pck)?;
        d.set_item("pck_threshold_px", report.pck_threshold_px)?;
        d.set_item("mean_error_px", report.mean_error_px)?;
        d.set_item("detected", report.detected)?;
        d.set_item("mean_loss", report.mean_loss)?;
        d.set_item("region_accuracy", report.region_accuracy)?;
        d.set_item("runtime_s", report.runtime_s)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(seed={}, curve_amplitude={}, scan_span={})",
            self.inner.seed, self.inner.phantom.curve_amplitude, self.inner.phantom.scan_span
        )
    }
}

fn merge_json(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// A completed scan: the full tick log plus the scenario it came from.
#[pyclass(name = "ScanResult")]
struct PyScanResult {
    log: ScanLog,
    scenario: CoreScenario,
}

#[pymethods]
impl PyScanResult {
    /// Final phase: "Done", "Stopped", ...
    fn phase(&self) -> String {
        self.log.final_phase().to_string()
    }

    fn ticks(&self) -> usize {
        self.log.records.len()
    }

    fn frames(&self) -> usize {
        self.log.frame_records().count()
    }

    fn contact_loss_ticks(&self) -> usize {
        self.log.contact_loss_ticks()
    }

    /// Deviation statistics; source is "kalman" or "detections".
    fn deviation_stats<'py>(&self, py: Python<'py>, source: &str) -> PyResult<Bound<'py, PyDict>> {
        let src = match source {
            "kalman" => PathSource::Kalman,
            "detections" => PathSource::Detections,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown source {other:?}; use 'kalman' or 'detections'"
                )))
            }
        };
        let stats = deviation_stats(&self.log, src).map_err(to_py_err)?;
        stats_dict(py, &stats)
    }

    /// Deformity angle from the Kalman path, degrees.
    #[pyo3(signature = (window_m=None))]
    fn measure_angle(&self, window_m: Option<f64>) -> PyResult<f64> {
        let window = window_m.unwrap_or(self.scenario.reconstruction.angle_window);
        measure_angle(&self.log, window).map_err(to_py_err)
    }

    /// (y, world_x) pairs of the Kalman path, meters.
    fn kalman_path(&self) -> Vec<(f64, f64)> {
        self.log
            .frame_records()
            .map(|r| {
                (
                    r.pose.y,
                    r.pose.x + imaging::pixels_to_meters(r.kf_x - imaging::WIDTH_PX as f64 / 2.0),
                )
            })
            .collect()
    }

    /// Normal contact force per tick, newtons.
    fn forces(&self) -> Vec<f64> {
        self.log.records.iter().map(|r| r.screw.f_z).collect()
    }

    fn to_csv(&self) -> String {
        self.log.to_csv()
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.log
            .write_csv(std::path::Path::new(path))
            .map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "ScanResult(phase={}, ticks={}, frames={})",
            self.log.final_phase(),
            self.log.records.len(),
            self.log.frame_records().count()
        )
    }
}

/// Scalar constant-position Kalman filter over pixel locations.
#[pyclass(name = "Kalman")]
struct PyKalman {
    state: KalmanState,
}

#[pymethods]
impl PyKalman {
    #[new]
    #[pyo3(signature = (q=0.5, r=500.0))]
    fn new(q: f64, r: f64) -> PyResult<Self> {
        let cfg = KalmanConfig { q, r };
        cfg.validate().map_err(to_py_err)?;
        Ok(PyKalman {
            state: KalmanState::new(cfg),
        })
    }

    /// One predict/update step; pass None for a gap frame. Returns the
    /// current estimate.
    #[pyo3(signature = (measurement=None))]
    fn step(&mut self, measurement: Option<f64>) -> f64 {
        let (next, est) = kf_step(&self.state, measurement);
        self.state = next;
        est
    }

    fn gain(&self) -> f64 {
        self.state.current_gain()
    }

    fn estimate(&self) -> f64 {
        self.state.x_hat
    }
}

/// Pixel offset to meters for the 80 mm / 640 px probe geometry.
#[pyfunction]
fn pixels_to_meters(dx_px: f64) -> f64 {
    imaging::pixels_to_meters(dx_px)
}

#[pymodule]
fn spinescan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyScanResult>()?;
    m.add_class::<PyKalman>()?;
    m.add_function(wrap_pyfunction!(pixels_to_meters, m)?)?;
    Ok(())
}

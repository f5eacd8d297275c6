//! Python bindings: scenarios, single runs, sweeps and threshold derivation.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use manetsim_core::harness::parse_seeds;
use manetsim_core::phy::{compute_rx_threshold, PhyParams, CS_TO_RX_RATIO};
use manetsim_core::{MetricRow, RunReport, ScenarioConfig, SweepResult, SweepSpec};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn row_dict<'py>(py: Python<'py>, row: &MetricRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (name, v) in MetricRow::NAMES.iter().zip(row.values()) {
        d.set_item(name, v)?;
    }
    Ok(d)
}

/// A scenario: every simulation parameter, addressed by dotted keys.
#[pyclass(name = "Scenario", module = "manetsim", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    cfg: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// Defaults, overridden by `key = value` lines in `text`.
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        ScenarioConfig::parse(text)
            .map(|cfg| PyScenario { cfg })
            .map_err(value_err)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        ScenarioConfig::load(&path)
            .map(|cfg| PyScenario { cfg })
            .map_err(value_err)
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.cfg.set(key, value).map_err(value_err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.cfg
            .get(key)
            .ok_or_else(|| value_err(format!("unknown key `{key}`")))
    }

    fn validate(&self) -> PyResult<()> {
        self.cfg.validate().map_err(value_err)
    }

    /// The resolved scenario as `key = value` lines.
    fn echo(&self) -> String {
        self.cfg.echo()
    }

    fn run(&self, py: Python<'_>) -> PyResult<PyReport> {
        let cfg = self.cfg.clone();
        py.detach(move || manetsim_core::run_scenario(cfg))
            .map(|report| PyReport { report })
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Scenario(protocol={}, seed={})", self.cfg.protocol, self.cfg.seed)
    }
}

/// Outcome of one run.
#[pyclass(name = "Report", module = "manetsim", frozen)]
struct PyReport {
    report: RunReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn protocol(&self) -> &'static str {
        self.report.protocol.key()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.report.seed
    }

    #[getter]
    fn events(&self) -> u64 {
        self.report.events
    }

    #[getter]
    fn trajectory_digest(&self) -> String {
        self.report.trajectory_digest.clone()
    }

    #[getter]
    fn traffic_digest(&self) -> String {
        self.report.traffic_digest.clone()
    }

    /// pdr, latency_avg, nrl, nml and throughput; None where undefined.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        row_dict(py, &self.report.metrics)
    }

    /// Raw counters in `key=value` form.
    fn ledger(&self) -> String {
        self.report.ledger.to_kv()
    }

    fn csv_row(&self) -> String {
        self.report.metrics.csv_row(&self.report.scenario, self.report.seed)
    }
}

/// A parameter sweep over one scenario key.
#[pyclass(name = "Sweep", module = "manetsim")]
struct PySweep {
    spec: SweepSpec,
}

#[pymethods]
impl PySweep {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        SweepSpec::parse(text)
            .map(|spec| PySweep { spec })
            .map_err(value_err)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        SweepSpec::load(&path)
            .map(|spec| PySweep { spec })
            .map_err(value_err)
    }

    /// Replaces the seed list with comma-separated seeds.
    fn set_seeds(&mut self, seeds: &str) -> PyResult<()> {
        self.spec.seeds = parse_seeds(seeds).map_err(value_err)?;
        Ok(())
    }

    fn run_count(&self) -> usize {
        self.spec.run_count()
    }

    #[pyo3(signature = (jobs = 0))]
    fn run(&self, py: Python<'_>, jobs: usize) -> PyResult<PySweepResult> {
        let spec = self.spec.clone();
        py.detach(move || manetsim_core::run_sweep(&spec, jobs))
            .map(|result| PySweepResult { result })
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

#[pyclass(name = "SweepResult", module = "manetsim", frozen)]
struct PySweepResult {
    result: SweepResult,
}

#[pymethods]
impl PySweepResult {
    /// One dict per (value, protocol) point with mean metrics.
    fn points<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.result
            .points
            .iter()
            .map(|p| {
                let d = row_dict(py, &p.mean)?;
                d.set_item("value", &p.value)?;
                d.set_item("protocol", p.protocol.key())?;
                d.set_item("runs", p.runs)?;
                Ok(d)
            })
            .collect()
    }

    fn results_csv(&self) -> String {
        self.result.results_csv()
    }

    fn runs_csv(&self) -> String {
        self.result.runs_csv()
    }

    /// Writes the result files into `out` and returns their paths.
    fn write(&self, out: std::path::PathBuf) -> PyResult<Vec<std::path::PathBuf>> {
        self.result.emit_outputs(&out).map_err(value_err)
    }
}

/// Receive and carrier-sense thresholds in watts for the default radio.
#[pyfunction]
#[pyo3(signature = (prob = 0.95, range = 250.0))]
fn thresholds(prob: f64, range: f64) -> PyResult<(f64, f64)> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(value_err(format!("probability must be in (0, 1), got {prob}")));
    }
    let rx = compute_rx_threshold(&PhyParams::default(), prob, range).map_err(value_err)?;
    Ok((rx, rx * CS_TO_RX_RATIO))
}

#[pymodule]
fn manetsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PySweep>()?;
    m.add_class::<PySweepResult>()?;
    m.add_function(wrap_pyfunction!(thresholds, m)?)?;
    Ok(())
}

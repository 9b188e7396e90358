//! Python bindings: sessions, scripts, function calls and datasets.
//!
//! Structured values (events, snapshots, reports) cross the boundary as plain
//! dicts and lists.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

use twinpilot_core::call::{Arg, FunctionCall};
use twinpilot_core::dataset::{evaluate, sample_dataset, Dataset, EvalOptions};
use twinpilot_core::script::Script;
use twinpilot_core::session::{bundled_script, replay, Session, SessionConfig, BUNDLED_SCRIPTS};
use twinpilot_core::sim::Disturbance;

create_exception!(twinpilot, TwinpilotError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    TwinpilotError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = match value.extract::<String>() {
        Ok(s) => s,
        Err(_) => value.py().import("json")?.call_method1("dumps", (value,))?.extract()?,
    };
    serde_json::from_str(&text).map_err(err)
}

fn load_config(arg: &str) -> PyResult<SessionConfig> {
    if arg == "demo" {
        return Ok(SessionConfig::demo());
    }
    SessionConfig::load(&PathBuf::from(arg)).map_err(err)
}

fn load_script(arg: &str) -> PyResult<Script> {
    match bundled_script(arg) {
        Some(s) => Ok(s),
        None => Script::load(&PathBuf::from(arg)).map_err(err),
    }
}

/// A parsed function call such as `conveyor_1_run('forward', 13)`.
#[pyclass(name = "FunctionCall", frozen, eq, hash, skip_from_py_object)]
#[derive(Clone, PartialEq, Eq, Hash)]
struct PyFunctionCall(FunctionCall);

#[pymethods]
impl PyFunctionCall {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        text.parse().map(Self).map_err(err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.0.name
    }

    #[getter]
    fn args<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyAny>>> {
        self.0
            .args
            .iter()
            .map(|a| match a {
                Arg::Str(s) => Ok(s.into_pyobject(py)?.into_any()),
                Arg::Int(i) => Ok(i.into_pyobject(py)?.into_any()),
            })
            .collect()
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("FunctionCall({:?})", self.0.to_string())
    }
}

/// A digital-twin session with its plant, observer, event log and agents.
#[pyclass(name = "Session", unsendable)]
struct PySession(Session);

#[pymethods]
impl PySession {
    /// `config` is a session config path or `"demo"`; `plain=True` gives an
    /// agent-free session on the bundled plant.
    #[new]
    #[pyo3(signature = (config = "demo", plain = false))]
    fn new(config: &str, plain: bool) -> PyResult<Self> {
        if plain {
            return Ok(Self(Session::plain(Default::default())));
        }
        Session::new(&load_config(config)?).map(Self).map_err(err)
    }

    #[getter]
    fn now(&self) -> u64 {
        self.0.now()
    }

    #[getter]
    fn agents_enabled(&self) -> bool {
        self.0.agents_enabled()
    }

    #[setter]
    fn set_agents_enabled(&mut self, enabled: bool) {
        self.0.set_agents_enabled(enabled);
    }

    #[pyo3(signature = (ticks = 1))]
    fn advance(&mut self, ticks: u64) -> PyResult<u64> {
        for _ in 0..ticks {
            self.0.advance().map_err(err)?;
        }
        Ok(self.0.now())
    }

    fn run_until(&mut self, until: u64) -> PyResult<()> {
        self.0.run_until(until).map_err(err)
    }

    /// Schedules the entries of a script (path or bundled name).
    fn schedule(&mut self, script: &str) -> PyResult<u64> {
        let script = load_script(script)?;
        self.0.schedule(script.entries).map_err(err)?;
        Ok(script.header.until)
    }

    fn invoke(&mut self, module: &str, call: &str) -> PyResult<Vec<u64>> {
        let call: FunctionCall = call.parse().map_err(err)?;
        self.0.invoke(module, &call).map_err(err)
    }

    fn assign_task(&mut self, module: &str, task: &str) -> PyResult<Vec<u64>> {
        self.0.assign_task(module, task).map_err(err)
    }

    fn user_task(&mut self, text: &str) -> PyResult<u64> {
        self.0.user_task(text).map_err(err)
    }

    /// Applies a disturbance given as a dict or JSON string.
    fn inject(&mut self, disturbance: &Bound<'_, PyAny>) -> PyResult<Vec<u64>> {
        let d: Disturbance = from_py(disturbance)?;
        self.0.inject(&d).map_err(err)
    }

    fn step_agents(&mut self) -> PyResult<()> {
        self.0.step_agents().map_err(err)
    }

    fn proposals<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.proposals())
    }

    fn approve(&mut self, id: u64) -> PyResult<()> {
        self.0.approve(id).map_err(err)
    }

    fn reject(&mut self, id: u64) -> PyResult<()> {
        self.0.reject(id).map_err(err)
    }

    fn lines(&self) -> Vec<String> {
        let log = self.0.log();
        log.render_all(log.events())
    }

    fn events<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.log().events())
    }

    fn snapshot<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.snapshot())
    }

    fn start_recording(&mut self) -> PyResult<()> {
        self.0.start_recording().map_err(err)
    }

    /// Stops recording; returns the suite wrapped in a dataset, plus warnings.
    fn stop_recording(&mut self, name: &str, task_description: &str) -> PyResult<(PyDataset, Vec<String>)> {
        let (suite, warnings) = self.0.stop_recording(name, task_description).map_err(err)?;
        let warnings = warnings.iter().map(ToString::to_string).collect();
        Ok((PyDataset(self.0.dataset(vec![suite])), warnings))
    }

    fn summary(&mut self) -> PyResult<String> {
        self.0.summary().map_err(err)
    }

    fn persist(&self, dir: PathBuf) -> PyResult<()> {
        self.0.persist(&dir).map_err(err)
    }
}

/// Recorded test cases with their prompt sections.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset(Dataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn sample() -> Self {
        Self(sample_dataset())
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Dataset::import_tests(&path).map(Self).map_err(err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Dataset::parse_str(text).map(Self).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.case_count()
    }

    fn manifest<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.manifest())
    }

    fn to_jsonl(&self) -> String {
        self.0.to_jsonl()
    }

    fn export_tests(&self, path: PathBuf) -> PyResult<()> {
        self.0.export_tests(&path).map_err(err)
    }

    fn export_sft(&self, path: PathBuf) -> PyResult<usize> {
        self.0.export_sft(&path).map_err(err)
    }

    /// Scores a backend and returns the report as a dict. `backend` is
    /// `"oracle"` or a backend id from `config`.
    #[pyo3(signature = (backend = "oracle", config = None, exclude_backend_failures = false))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        backend: &str,
        config: Option<&str>,
        exclude_backend_failures: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let options = EvalOptions {
            exclude_backend_failures,
        };
        let configured = match config {
            Some(c) => load_config(c)?.backends().map_err(err)?.remove(backend),
            None => None,
        };
        let mut report = match configured {
            Some(b) => evaluate(&self.0, b.as_ref(), options),
            None if backend == "oracle" => evaluate(&self.0, &self.0.oracle("oracle"), options),
            None => return Err(err(format!("unknown backend {backend:?}"))),
        };
        report.backend = backend.to_string();
        let out = to_py(py, &report)?;
        out.set_item("table", report.table())?;
        Ok(out)
    }
}

/// Replays a script without agents and returns its rendered view.
#[pyfunction]
fn replay_script(script: &str) -> PyResult<Vec<String>> {
    replay(&load_script(script)?).map_err(err)
}

#[pyfunction]
fn bundled_scripts() -> Vec<&'static str> {
    BUNDLED_SCRIPTS.to_vec()
}

#[pymodule]
pub fn twinpilot(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TwinpilotError", m.py().get_type::<TwinpilotError>())?;
    m.add_class::<PyFunctionCall>()?;
    m.add_class::<PySession>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(replay_script, m)?)?;
    m.add_function(wrap_pyfunction!(bundled_scripts, m)?)?;
    Ok(())
}

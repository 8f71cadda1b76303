//! Python bindings: `import proclens`.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use proclens_core::evaluation::{self, EvaluationRecord};
use proclens_core::event_log::{self, EditKind};
use proclens_core::llm_harness::{
    generation_stats, run_batch, CacheTransport, Harness, HttpTransport, MockTransport, PlanSpec, Transport,
};
use proclens_core::project::{GenerateError, Project as CoreProject};
use proclens_core::promptgen::{self, Handout};
use proclens_core::replay::{reconstruct_at, ReplayMode};
use proclens_core::report::build_report;
use proclens_core::segmentation::{self, SegmentOptions, DEFAULT_THRESHOLD_MS};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_task(task: &str) -> PyResult<promptgen::TaskKind> {
    task.parse().map_err(value_err)
}

fn generate_err(e: GenerateError) -> PyErr {
    if e.is_not_found() {
        PyKeyError::new_err(e.to_string())
    } else {
        value_err(e)
    }
}

/// One insert or delete at a character offset.
#[pyclass(module = "proclens", frozen, get_all, from_py_object)]
#[derive(Clone)]
pub struct EditEvent {
    seq: u64,
    subject_id: String,
    assignment_id: String,
    file_path: String,
    ts_ms: i64,
    kind: String,
    offset: usize,
    text: String,
}

impl EditEvent {
    fn from_core(e: &event_log::EditEvent) -> Self {
        EditEvent {
            seq: e.seq,
            subject_id: e.subject_id.clone(),
            assignment_id: e.assignment_id.clone(),
            file_path: e.file_path.clone(),
            ts_ms: e.ts_ms,
            kind: e.kind.as_str().to_owned(),
            offset: e.offset,
            text: e.text.clone(),
        }
    }

    fn to_core(&self) -> PyResult<event_log::EditEvent> {
        let kind = match self.kind.as_str() {
            "insert" => EditKind::Insert,
            "delete" => EditKind::Delete,
            other => return Err(PyValueError::new_err(format!("unknown kind '{other}'"))),
        };
        Ok(event_log::EditEvent {
            seq: self.seq,
            subject_id: self.subject_id.clone(),
            assignment_id: self.assignment_id.clone(),
            file_path: self.file_path.clone(),
            ts_ms: self.ts_ms,
            kind,
            offset: self.offset,
            text: self.text.clone(),
        })
    }
}

#[pymethods]
impl EditEvent {
    #[new]
    #[allow(clippy::too_many_arguments)]
    fn new(
        seq: u64,
        subject_id: String,
        assignment_id: String,
        file_path: String,
        ts_ms: i64,
        kind: String,
        offset: usize,
        text: String,
    ) -> PyResult<Self> {
        let e = EditEvent {
            seq,
            subject_id,
            assignment_id,
            file_path,
            ts_ms,
            kind,
            offset,
            text,
        };
        e.to_core()?;
        Ok(e)
    }

    fn __repr__(&self) -> String {
        format!("EditEvent(seq={}, ts_ms={}, {} {:?} @{})", self.seq, self.ts_ms, self.kind, self.text, self.offset)
    }
}

/// Events of one (subject, assignment, file), ordered by time.
#[pyclass(module = "proclens", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Session {
    inner: event_log::Session,
}

#[pymethods]
impl Session {
    #[new]
    fn new(events: Vec<EditEvent>) -> PyResult<Self> {
        let events = events.iter().map(EditEvent::to_core).collect::<PyResult<Vec<_>>>()?;
        let first = events.first().ok_or_else(|| value_err("a session needs at least one event"))?;
        let inner = event_log::Session::new(first.key(), events).map_err(value_err)?;
        Ok(Session { inner })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.key.id()
    }

    #[getter]
    fn subject_id(&self) -> &str {
        &self.inner.key.subject_id
    }

    #[getter]
    fn assignment_id(&self) -> &str {
        &self.inner.key.assignment_id
    }

    #[getter]
    fn file_path(&self) -> &str {
        &self.inner.key.file_path
    }

    fn events(&self) -> Vec<EditEvent> {
        self.inner.events().iter().map(EditEvent::from_core).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Code after the first `k` events (1-based).
    fn state_at(&self, k: usize) -> PyResult<String> {
        reconstruct_at(&self.inner, k).map(|s| s.text).map_err(value_err)
    }

    #[pyo3(signature = (threshold_ms = DEFAULT_THRESHOLD_MS, dedup = false, lenient = false))]
    fn snapshots(&self, threshold_ms: i64, dedup: bool, lenient: bool) -> PyResult<SnapshotSequence> {
        let opts = SegmentOptions {
            threshold_ms,
            dedup,
            mode: if lenient { ReplayMode::Lenient } else { ReplayMode::Strict },
        };
        segmentation::extract_snapshots(&self.inner, opts)
            .map(|inner| SnapshotSequence { inner })
            .map_err(value_err)
    }

    #[pyo3(signature = (quantum_ms, threshold_ms = DEFAULT_THRESHOLD_MS))]
    fn deidentify(&self, quantum_ms: i64, threshold_ms: i64) -> PyResult<Session> {
        event_log::deidentify_timing(&self.inner, quantum_ms, threshold_ms)
            .map(|inner| Session { inner })
            .map_err(value_err)
    }

    fn to_jsonl(&self) -> String {
        event_log::to_jsonl(self.inner.events())
    }

    fn __repr__(&self) -> String {
        format!("Session({}, {} events)", self.inner.key.id(), self.inner.len())
    }
}

#[pyclass(module = "proclens", frozen)]
pub struct SnapshotSequence {
    inner: segmentation::SnapshotSequence,
}

#[pymethods]
impl SnapshotSequence {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn texts(&self) -> Vec<String> {
        self.inner.snapshots.iter().map(|s| s.state.text.clone()).collect()
    }

    fn reasons(&self) -> Vec<String> {
        self.inner
            .snapshots
            .iter()
            .map(|s| serde_json::to_value(s.reason).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default())
            .collect()
    }

    fn event_indices(&self) -> Vec<usize> {
        self.inner.snapshots.iter().map(|s| s.state.event_index).collect()
    }

    /// Steps `start..=end` (1-based), renumbered from 1.
    fn slice(&self, start: usize, end: usize) -> PyResult<SnapshotSequence> {
        self.inner
            .slice_steps(start, end)
            .map(|inner| SnapshotSequence { inner })
            .map_err(value_err)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("SnapshotSequence({}, {} steps)", self.inner.session.id(), self.inner.len())
    }
}

#[pyclass(module = "proclens", frozen, get_all)]
pub struct Prompt {
    task: String,
    text: String,
    estimated_tokens: usize,
    step_count: usize,
}

#[pymethods]
impl Prompt {
    fn __repr__(&self) -> String {
        format!("Prompt({}, {} steps, ~{} tokens)", self.task, self.step_count, self.estimated_tokens)
    }
}

impl From<promptgen::PromptBundle> for Prompt {
    fn from(b: promptgen::PromptBundle) -> Self {
        Prompt {
            task: b.task.as_str().to_owned(),
            text: b.prompt_text,
            estimated_tokens: b.estimated_tokens,
            step_count: b.step_count,
        }
    }
}

/// A project directory loaded from its TOML config.
#[pyclass(module = "proclens", frozen)]
pub struct Project {
    inner: CoreProject,
}

fn make_harness(project: &CoreProject, transport: &str) -> PyResult<Harness> {
    let t: Arc<dyn Transport> = match transport {
        "http" => Arc::new(HttpTransport::new()),
        "mock" => Arc::new(MockTransport::canned()),
        "cache" => Arc::new(CacheTransport::from_store(&project.records).map_err(value_err)?),
        other => return Err(PyValueError::new_err(format!("transport must be http, mock or cache, not '{other}'"))),
    };
    Ok(Harness::new(t).with_rate_limit(project.config.rate_limit_ms))
}

#[pymethods]
impl Project {
    #[new]
    fn new(config_path: PathBuf) -> PyResult<Self> {
        CoreProject::load(&config_path)
            .map(|inner| Project { inner })
            .map_err(value_err)
    }

    fn session_ids(&self) -> Vec<String> {
        self.inner.session_ids()
    }

    fn model_ids(&self) -> Vec<String> {
        self.inner.model_ids()
    }

    fn session(&self, id: &str) -> PyResult<Session> {
        self.inner
            .session(id)
            .map(|s| Session { inner: s.clone() })
            .ok_or_else(|| PyKeyError::new_err(id.to_owned()))
    }

    #[pyo3(signature = (session_id, task, start = None, end = None))]
    fn render_prompt(&self, session_id: &str, task: &str, start: Option<usize>, end: Option<usize>) -> PyResult<Prompt> {
        let range = self.range(session_id, start, end)?;
        self.inner
            .prompt(session_id, parse_task(task)?, range)
            .map(|(b, _)| b.into())
            .map_err(generate_err)
    }

    /// Generates and stores one record; returns it as a dict.
    #[pyo3(signature = (session_id, task, model, start = None, end = None, transport = "http"))]
    #[allow(clippy::too_many_arguments)]
    fn generate<'py>(
        &self,
        py: Python<'py>,
        session_id: &str,
        task: &str,
        model: &str,
        start: Option<usize>,
        end: Option<usize>,
        transport: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let harness = make_harness(&self.inner, transport)?;
        let task = parse_task(task)?;
        let range = self.range(session_id, start, end)?;
        let record = py
            .detach(|| self.inner.generate(&harness, session_id, task, model, range, false))
            .map_err(generate_err)?;
        to_py(py, &record)
    }

    /// Runs a plan given as a JSON string (`"{}"` for everything).
    #[pyo3(signature = (plan_json = "{}", transport = "http", force = false))]
    fn run<'py>(&self, py: Python<'py>, plan_json: &str, transport: &str, force: bool) -> PyResult<Bound<'py, PyAny>> {
        let spec: PlanSpec = serde_json::from_str(plan_json).map_err(value_err)?;
        let p = &self.inner;
        let plan = spec.resolve(&p.session_ids(), &p.config.tasks, &p.model_ids(), p.config.threshold_ms);
        let harness = make_harness(p, transport)?;
        let outcome = py
            .detach(|| run_batch(&plan, p.batch_inputs(), &harness, &p.records, force))
            .map_err(value_err)?;
        let summary = serde_json::json!({
            "records": outcome.records.len(),
            "executed": outcome.executed,
            "reused": outcome.reused,
            "errors": outcome.records.iter().filter(|r| !r.is_ok()).count(),
        });
        to_py(py, &summary)
    }

    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.records.list().map_err(value_err)?)
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &generation_stats(&self.inner.records.list().map_err(value_err)?))
    }

    /// Stores a rating given as a dict; returns `{latest, history}`.
    fn rate<'py>(&self, py: Python<'py>, rating: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let text: String = py.import("json")?.call_method1("dumps", (rating,))?.extract()?;
        let rating: EvaluationRecord = serde_json::from_str(&text).map_err(value_err)?;
        let stored = evaluation::record_rating(&self.inner.evaluations, &self.inner.records, rating).map_err(|e| match e {
            evaluation::EvalError::UnknownRecord(_) => PyKeyError::new_err(e.to_string()),
            e => value_err(e),
        })?;
        to_py(py, &stored)
    }

    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.build_report()?)
    }

    fn report_text(&self) -> PyResult<String> {
        Ok(self.build_report()?.render())
    }
}

impl Project {
    fn range(&self, session_id: &str, start: Option<usize>, end: Option<usize>) -> PyResult<Option<(usize, usize)>> {
        if start.is_none() && end.is_none() {
            return Ok(None);
        }
        let len = self.inner.snapshots(session_id, None, false).map_err(generate_err)?.len();
        Ok(Some((start.unwrap_or(1), end.unwrap_or(len))))
    }

    fn build_report(&self) -> PyResult<proclens_core::report::Report> {
        let records = self.inner.records.list().map_err(value_err)?;
        let evaluations = self.inner.evaluations.latest().map_err(value_err)?;
        Ok(build_report(&records, &evaluations, &self.inner.codebook))
    }
}

#[pyfunction]
fn parse_jsonl(text: &str) -> PyResult<Vec<EditEvent>> {
    event_log::parse_jsonl(text.as_bytes())
        .map(|v| v.iter().map(EditEvent::from_core).collect())
        .map_err(value_err)
}

#[pyfunction]
fn split_sessions(events: Vec<EditEvent>) -> PyResult<Vec<Session>> {
    let events = events.iter().map(EditEvent::to_core).collect::<PyResult<Vec<_>>>()?;
    Ok(event_log::split_sessions(events).into_iter().map(|inner| Session { inner }).collect())
}

/// Validation report as a dict with `errors`, `warnings` and `counts`.
#[pyfunction]
fn validate<'py>(py: Python<'py>, events: Vec<EditEvent>) -> PyResult<Bound<'py, PyAny>> {
    let events = events.iter().map(EditEvent::to_core).collect::<PyResult<Vec<_>>>()?;
    to_py(py, &event_log::validate(&events))
}

#[pyfunction]
fn build_prompt(task: &str, handout_id: String, handout_text: String, seq: &SnapshotSequence) -> PyResult<Prompt> {
    let handout = Handout {
        id: handout_id,
        text: handout_text,
    };
    promptgen::build_prompt(parse_task(task)?, &handout, &seq.inner)
        .map(Prompt::from)
        .map_err(value_err)
}

#[pyfunction]
fn estimate_tokens(text: &str) -> usize {
    promptgen::estimate_tokens(text)
}

#[pyfunction]
fn extract_step_refs(text: &str) -> Vec<u64> {
    evaluation::extract_step_refs(text)
}

#[pyfunction]
fn check_step_refs<'py>(py: Python<'py>, text: &str, step_count: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &evaluation::check_step_refs(text, step_count))
}

/// Percent agreement and Cohen's kappa over two acceptability vectors.
#[pyfunction]
fn acceptability_agreement<'py>(py: Python<'py>, a: Vec<bool>, b: Vec<bool>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &evaluation::acceptability_agreement(&a, &b).map_err(value_err)?)
}

#[pyfunction]
fn prompt_hash(text: &str) -> String {
    proclens_core::llm_harness::prompt_hash(text)
}

#[pymodule]
fn proclens(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DEFAULT_THRESHOLD_MS", DEFAULT_THRESHOLD_MS)?;
    m.add("FEEDBACK_TEMPLATE", promptgen::FEEDBACK_TEMPLATE)?;
    m.add("SUMMARY_TEMPLATE", promptgen::SUMMARY_TEMPLATE)?;
    m.add_class::<EditEvent>()?;
    m.add_class::<Session>()?;
    m.add_class::<SnapshotSequence>()?;
    m.add_class::<Prompt>()?;
    m.add_class::<Project>()?;
    m.add_function(wrap_pyfunction!(parse_jsonl, m)?)?;
    m.add_function(wrap_pyfunction!(split_sessions, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(extract_step_refs, m)?)?;
    m.add_function(wrap_pyfunction!(check_step_refs, m)?)?;
    m.add_function(wrap_pyfunction!(acceptability_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(prompt_hash, m)?)?;
    Ok(())
}

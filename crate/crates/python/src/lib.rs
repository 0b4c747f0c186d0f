//! Python bindings for the question bank, templates, parser, chain runner
//! and metrics.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clausechain::chain::{ChainConfig, ChainRunner, RunArtifact};
use clausechain::metrics::{build_report, score, EvalCounts, ScoredItem};
use clausechain::parser::{parse_response as parse_raw, ConstraintMode, PredictionSet};
use clausechain::provider::{CacheStore, CachedProvider, MockScript, OpenAiClient, Provider, RetryPolicy, ScriptedMock, DEFAULT_API_KEY_ENV};
use clausechain::schema::{load_dataset, load_question_bank, ClauseItem, QuestionBank};
use clausechain::templating::{SlotBindings, TemplateStore};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn bank(path: Option<PathBuf>) -> PyResult<QuestionBank> {
    match path {
        Some(p) => load_question_bank(p).map_err(value_err),
        None => Ok(QuestionBank::default_bank()),
    }
}

fn templates(dir: Option<PathBuf>) -> PyResult<TemplateStore> {
    match dir {
        Some(d) => TemplateStore::from_dir(d).map_err(value_err),
        None => Ok(TemplateStore::bundled()),
    }
}

fn mode(name: &str) -> PyResult<ConstraintMode> {
    name.parse().map_err(PyValueError::new_err)
}

/// Questions of the bank as a list of dicts.
#[pyfunction]
#[pyo3(signature = (bank_path=None))]
fn questions(py: Python<'_>, bank_path: Option<PathBuf>) -> PyResult<Bound<'_, PyAny>> {
    json_to_py(py, &bank(bank_path)?.questions())
}

/// `(id, question, stage, version)` for every template.
#[pyfunction]
#[pyo3(signature = (templates_dir=None))]
fn template_ids(templates_dir: Option<PathBuf>) -> PyResult<Vec<(String, String, u8, u32)>> {
    Ok(templates(templates_dir)?
        .templates()
        .iter()
        .map(|t| (t.id.clone(), if t.is_generic() { "*".into() } else { t.question_id.clone() }, t.stage, t.version))
        .collect())
}

/// Renders one stage of a template. Stage 1 needs `clause`, stage 2 needs
/// `response`.
#[pyfunction]
#[pyo3(signature = (template_id, question_id, clause=None, stage=1, response=None, bank_path=None, templates_dir=None))]
fn render_prompt(
    template_id: &str,
    question_id: &str,
    clause: Option<String>,
    stage: u8,
    response: Option<String>,
    bank_path: Option<PathBuf>,
    templates_dir: Option<PathBuf>,
) -> PyResult<String> {
    let bank = bank(bank_path)?;
    let question = bank.get(question_id).ok_or_else(|| value_err(format!("unknown question {question_id}")))?;
    let template = templates(templates_dir)?.stage(template_id, &question.id, stage).map_err(value_err)?;
    let bindings = match (stage, clause, response) {
        (1, Some(text), _) => SlotBindings::for_clause(
            question,
            &ClauseItem {
                id: "clause".into(),
                concept: question.concept.clone(),
                clause_text: text,
                source: None,
            },
        ),
        (2, _, Some(r)) => SlotBindings::for_response(question, r),
        (1, None, _) => return Err(value_err("stage 1 needs clause")),
        _ => return Err(value_err("stage 2 needs response")),
    };
    template.render(&bindings).map_err(value_err)
}

#[pyclass(name = "Prediction", frozen, module = "pyclausechain")]
struct PyPrediction {
    inner: PredictionSet,
}

#[pymethods]
impl PyPrediction {
    #[getter]
    fn selected(&self) -> Vec<String> {
        self.inner.selected.iter().map(char::to_string).collect()
    }

    #[getter]
    fn abstained(&self) -> bool {
        self.inner.abstained
    }

    #[getter]
    fn unparseable(&self) -> bool {
        self.inner.unparseable
    }

    #[getter]
    fn unparseable_reason(&self) -> Option<String> {
        self.inner.unparseable_reason.clone()
    }

    #[getter]
    fn constraint_violation(&self) -> Option<String> {
        self.inner.constraint_violation.clone()
    }

    #[getter]
    fn multiple_payloads(&self) -> bool {
        self.inner.multiple_payloads
    }

    #[getter]
    fn explanations(&self) -> Vec<(String, String)> {
        self.inner
            .explanations
            .iter()
            .flatten()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Prediction(selected={:?}, abstained={}, unparseable={})",
            self.selected(),
            if self.inner.abstained { "True" } else { "False" },
            if self.inner.unparseable { "True" } else { "False" }
        )
    }
}

/// Parses raw model output for a question.
#[pyfunction]
#[pyo3(signature = (raw, question_id, constraint_mode="observe", bank_path=None))]
fn parse_response(raw: &str, question_id: &str, constraint_mode: &str, bank_path: Option<PathBuf>) -> PyResult<PyPrediction> {
    let bank = bank(bank_path)?;
    let question = bank.get(question_id).ok_or_else(|| value_err(format!("unknown question {question_id}")))?;
    Ok(PyPrediction {
        inner: parse_raw(raw, question, mode(constraint_mode)?),
    })
}

/// Scripted offline model. `script` is a mock-script JSON document.
#[pyclass(name = "MockProvider", frozen, module = "pyclausechain")]
struct PyMockProvider {
    inner: Arc<ScriptedMock>,
}

#[pymethods]
impl PyMockProvider {
    #[new]
    #[pyo3(signature = (script=None, default=None))]
    fn new(script: Option<&str>, default: Option<String>) -> PyResult<Self> {
        let mut parsed: MockScript = match script {
            Some(text) => serde_json::from_str(text).map_err(value_err)?,
            None => MockScript::default(),
        };
        if default.is_some() {
            parsed.default = default;
        }
        Ok(Self {
            inner: Arc::new(ScriptedMock::from_script(&parsed)),
        })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(ScriptedMock::load_script(path).map_err(value_err)?),
        })
    }

    #[getter]
    fn call_count(&self) -> usize {
        self.inner.call_count()
    }

    /// Prompts received so far.
    fn prompts(&self) -> Vec<String> {
        self.inner.calls().into_iter().map(|c| c.prompt_text).collect()
    }
}

/// OpenAI-compatible endpoint. The key is read from `api_key_env`.
#[pyclass(name = "OpenAIProvider", frozen, module = "pyclausechain")]
struct PyOpenAiProvider {
    inner: Arc<OpenAiClient>,
}

#[pymethods]
impl PyOpenAiProvider {
    #[new]
    #[pyo3(signature = (base_url="https://api.openai.com/v1", api_key_env=DEFAULT_API_KEY_ENV, timeout_secs=120))]
    fn new(base_url: &str, api_key_env: &str, timeout_secs: u64) -> PyResult<Self> {
        let client = OpenAiClient::from_env(base_url, api_key_env, Duration::from_secs(timeout_secs), RetryPolicy::default()).map_err(value_err)?;
        Ok(Self { inner: Arc::new(client) })
    }
}

fn provider_of(obj: &Bound<'_, PyAny>) -> PyResult<Arc<dyn Provider>> {
    if let Ok(m) = obj.cast::<PyMockProvider>() {
        return Ok(m.get().inner.clone());
    }
    if let Ok(o) = obj.cast::<PyOpenAiProvider>() {
        return Ok(o.get().inner.clone());
    }
    Err(value_err("provider must be a MockProvider or OpenAIProvider"))
}

#[pyclass(name = "RunArtifact", frozen, module = "pyclausechain")]
struct PyRunArtifact {
    inner: RunArtifact,
}

#[pymethods]
impl PyRunArtifact {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunArtifact::read(path).map_err(value_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(|e| PyOSError::new_err(format!("{}: {e}", path.display())))
    }

    fn to_jsonl(&self) -> String {
        self.inner.to_jsonl()
    }

    fn __len__(&self) -> usize {
        self.inner.runs.len()
    }

    /// Parsed predictions keyed by clause id.
    fn predictions(&self) -> Vec<(String, Vec<String>)> {
        self.inner
            .runs
            .iter()
            .map(|r| (r.clause_id.clone(), r.prediction.selected.iter().map(char::to_string).collect()))
            .collect()
    }

    fn counts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let c = self.inner.counts();
        json_to_py(
            py,
            &serde_json::json!({
                "runs": self.inner.runs.len(),
                "scored": c.scored,
                "abstained": c.abstained,
                "unparseable": c.unparseable,
                "constraint_violations": c.constraint_violations,
                "failures": c.failures,
                "skipped": c.skipped,
            }),
        )
    }

    #[getter]
    fn failures(&self) -> Vec<(String, String)> {
        self.inner.failures.iter().map(|f| (f.clause_id.clone(), f.error.clone())).collect()
    }
}

/// Runs a chain over every clause of the dataset annotated for the question.
#[pyfunction]
#[pyo3(signature = (dataset_path, question_id, template_id, model_id, provider, constraint_mode="enforce", parallelism=4, temperature=0.0, cache_path=None, bank_path=None, templates_dir=None))]
#[allow(clippy::too_many_arguments)]
fn run_chain(
    py: Python<'_>,
    dataset_path: PathBuf,
    question_id: &str,
    template_id: &str,
    model_id: &str,
    provider: &Bound<'_, PyAny>,
    constraint_mode: &str,
    parallelism: usize,
    temperature: f64,
    cache_path: Option<PathBuf>,
    bank_path: Option<PathBuf>,
    templates_dir: Option<PathBuf>,
) -> PyResult<PyRunArtifact> {
    let bank = bank(bank_path)?;
    let store = templates(templates_dir)?;
    let dataset = load_dataset(&dataset_path, &bank).map_err(value_err)?;
    let mut config = ChainConfig::new(template_id, question_id, model_id);
    config.constraint_mode = mode(constraint_mode)?;
    config.parallelism = parallelism;
    config.temperature = temperature;
    let runner = ChainRunner::new(config, &bank, &store).map_err(value_err)?;
    let upstream = provider_of(provider)?;
    let cache = match cache_path {
        Some(p) => Some(Arc::new(CacheStore::open(p).map_err(|e| PyOSError::new_err(e.to_string()))?)),
        None => None,
    };
    let artifact = py.detach(|| match cache {
        Some(store) => runner.run_batch(&dataset, &CachedProvider::new(upstream, store)),
        None => runner.run_batch(&dataset, &upstream),
    });
    Ok(PyRunArtifact { inner: artifact })
}

/// Scores a run against the dataset's gold sets; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (artifact, dataset_path, constraint_mode="observe", bank_path=None))]
fn evaluate<'py>(
    py: Python<'py>,
    artifact: &PyRunArtifact,
    dataset_path: PathBuf,
    constraint_mode: &str,
    bank_path: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let bank = bank(bank_path)?;
    let dataset = load_dataset(&dataset_path, &bank).map_err(value_err)?;
    let report = build_report(&artifact.inner, &dataset, &bank, mode(constraint_mode)?).map_err(value_err)?;
    json_to_py(py, &report)
}

/// Scores predicted against gold option sets (lists of letters) directly.
#[pyfunction]
#[pyo3(signature = (predicted, gold, question_id, bank_path=None))]
fn score_sets<'py>(
    py: Python<'py>,
    predicted: Vec<Vec<String>>,
    gold: Vec<Vec<String>>,
    question_id: &str,
    bank_path: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    if predicted.len() != gold.len() {
        return Err(value_err("predicted and gold differ in length"));
    }
    let bank = bank(bank_path)?;
    let question = bank.get(question_id).ok_or_else(|| value_err(format!("unknown question {question_id}")))?;
    let letters = |v: &[String]| -> PyResult<_> {
        v.iter()
            .map(|s| clausechain::schema::normalize_letter(s).ok_or_else(|| value_err(format!("{s:?} is not a letter"))))
            .collect()
    };
    let items = predicted
        .iter()
        .zip(&gold)
        .enumerate()
        .map(|(i, (p, g))| {
            Ok(ScoredItem {
                clause_id: i.to_string(),
                predicted: letters(p)?,
                gold: letters(g)?,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let report = score(&items, question, "", "", ConstraintMode::Observe, EvalCounts {
        items: items.len(),
        scored: items.len(),
        ..Default::default()
    })
    .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &report)
}

#[pymodule]
fn pyclausechain(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPrediction>()?;
    m.add_class::<PyMockProvider>()?;
    m.add_class::<PyOpenAiProvider>()?;
    m.add_class::<PyRunArtifact>()?;
    m.add_function(wrap_pyfunction!(questions, m)?)?;
    m.add_function(wrap_pyfunction!(template_ids, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_response, m)?)?;
    m.add_function(wrap_pyfunction!(run_chain, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(score_sets, m)?)?;
    Ok(())
}

//! Single-stage and two-stage chain execution.
//!
//! A single-stage chain (P1, P2) renders one prompt from the clause and parses
//! the reply. A two-stage chain (P3, P4, P5) first asks for a question-focused
//! summary of the clause, then renders the second-stage prompt with that
//! summary in place of the clause. The two calls are independent requests;
//! no conversation state is carried between them.

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::parser::{parse_response, ConstraintMode, Outcome, PredictionSet};
use crate::provider::{CompletionRequest, FinishReason, Provider, ProviderError};
use crate::schema::{ClauseItem, Dataset, QuestionBank, QuestionSpec};
use crate::templating::{ChainTemplates, PromptTemplate, SlotBindings, TemplateError, TemplateStore};

#[derive(Debug, thiserror::Error)]
pub enum ChainError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("unknown question {0}")]
    UnknownQuestion(String),
    #[error("invalid chain configuration: {0}")]
    Config(String),
    #[error("stage {stage} provider call failed: {source}")]
    Provider {
        stage: u8,
        #[source]
        source: ProviderError,
    },
    #[error("stage-1 output was truncated by the model; refusing to pass a clipped summary to stage 2")]
    Stage1Truncated,
    #[error("trace error: {0}")]
    Trace(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub template_id: String,
    pub question_id: String,
    pub model_id: String,
    /// Name used for the model in reports when it differs from `model_id`
    /// (for example a short alias mapped to a dated API model name).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_label: Option<String>,
    /// Model for stage 2 when different from `model_id`. Such runs are not
    /// replication runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2_model_id: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
    #[serde(default = "default_run_mode")]
    pub constraint_mode: ConstraintMode,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_run_mode() -> ConstraintMode {
    ConstraintMode::Enforce
}

fn default_parallelism() -> usize {
    4
}

impl ChainConfig {
    pub fn new(template_id: impl Into<String>, question_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            template_id: template_id.into(),
            question_id: question_id.into(),
            model_id: model_id.into(),
            model_label: None,
            stage2_model_id: None,
            temperature: 0.0,
            max_output_tokens: None,
            constraint_mode: default_run_mode(),
            parallelism: default_parallelism(),
        }
    }

    pub fn model_label(&self) -> &str {
        self.model_label.as_deref().unwrap_or(&self.model_id)
    }

    pub fn stage2_model(&self) -> &str {
        self.stage2_model_id.as_deref().unwrap_or(&self.model_id)
    }

    /// Same model for both stages at temperature zero.
    pub fn is_replication(&self) -> bool {
        self.stage2_model() == self.model_id && self.temperature == 0.0
    }

    fn check(&self) -> Result<(), ChainError> {
        if self.parallelism == 0 {
            return Err(ChainError::Config("parallelism must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ChainError::Config(format!("temperature {} must be non-negative", self.temperature)));
        }
        if self.model_id.trim().is_empty() {
            return Err(ChainError::Config("model id is empty".into()));
        }
        Ok(())
    }
}

/// The trace of one clause through a chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRun {
    pub clause_id: String,
    pub question_id: String,
    pub template_id: String,
    /// Absent for single-stage chains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_latency_ms: Option<u64>,
    /// The answer-producing prompt (the only prompt of a single-stage chain).
    pub stage2_prompt: String,
    pub final_raw: String,
    pub final_finish_reason: FinishReason,
    pub stage2_latency_ms: u64,
    pub prediction: PredictionSet,
    /// Provider calls made for this clause, whether or not they hit a cache.
    pub provider_calls: u32,
}

impl ChainRun {
    pub fn is_two_stage(&self) -> bool {
        self.stage1_prompt.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateStamp {
    pub stage: u8,
    pub version: u32,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub config: ChainConfig,
    pub templates: Vec<TemplateStamp>,
    pub replication: bool,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub clause_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub clause_id: String,
    pub reason: String,
}

/// Result of a batch: runs and failures sorted by clause id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub header: ArtifactHeader,
    pub runs: Vec<ChainRun>,
    pub failures: Vec<ItemFailure>,
    pub skipped: Vec<SkippedItem>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum TraceLine {
    Header(ArtifactHeader),
    Run(ChainRun),
    Failure(ItemFailure),
    Skip(SkippedItem),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunCounts {
    pub scored: usize,
    pub abstained: usize,
    pub unparseable: usize,
    pub constraint_violations: usize,
    pub failures: usize,
    pub skipped: usize,
}

impl RunArtifact {
    pub fn config(&self) -> &ChainConfig {
        &self.header.config
    }

    pub fn counts(&self) -> RunCounts {
        let mut c = RunCounts {
            failures: self.failures.len(),
            skipped: self.skipped.len(),
            ..Default::default()
        };
        for r in &self.runs {
            match r.prediction.outcome() {
                Outcome::Parsed => c.scored += 1,
                Outcome::Abstained => c.abstained += 1,
                Outcome::Unparseable => c.unparseable += 1,
            }
            if r.prediction.constraint_violation.is_some() {
                c.constraint_violations += 1;
            }
        }
        c
    }

    /// JSON-lines trace: a header line, then one line per run, failure and
    /// skip, each tagged by `"kind"`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &TraceLine| {
            out.push_str(&serde_json::to_string(line).expect("trace line serializes"));
            out.push('\n');
        };
        push(&TraceLine::Header(self.header.clone()));
        for r in &self.runs {
            push(&TraceLine::Run(r.clone()));
        }
        for f in &self.failures {
            push(&TraceLine::Failure(f.clone()));
        }
        for s in &self.skipped {
            push(&TraceLine::Skip(s.clone()));
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ChainError> {
        let mut header = None;
        let (mut runs, mut failures, mut skipped) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(line)
                .map_err(|e| ChainError::Trace(format!("line {}: {e}", i + 1)))?;
            match parsed {
                TraceLine::Header(h) if header.is_none() => header = Some(h),
                TraceLine::Header(_) => return Err(ChainError::Trace(format!("line {}: second header", i + 1))),
                TraceLine::Run(r) => runs.push(r),
                TraceLine::Failure(f) => failures.push(f),
                TraceLine::Skip(s) => skipped.push(s),
            }
        }
        let header = header.ok_or_else(|| ChainError::Trace("trace has no header line".into()))?;
        Ok(Self { header, runs, failures, skipped })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ChainError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ChainError::Trace(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }
}

/// A configured chain for one question.
#[derive(Debug, Clone)]
pub struct ChainRunner {
    config: ChainConfig,
    question: QuestionSpec,
    templates: ChainTemplates,
}

impl ChainRunner {
    pub fn new(config: ChainConfig, bank: &QuestionBank, store: &TemplateStore) -> Result<Self, ChainError> {
        config.check()?;
        let question = bank
            .get(&config.question_id)
            .ok_or_else(|| ChainError::UnknownQuestion(config.question_id.clone()))?
            .clone();
        let templates = store.chain(&config.template_id, &question.id)?;
        Ok(Self {
            config,
            question,
            templates,
        })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn question(&self) -> &QuestionSpec {
        &self.question
    }

    pub fn templates(&self) -> &ChainTemplates {
        &self.templates
    }

    fn request(&self, model: &str, prompt: String, template: &PromptTemplate) -> CompletionRequest {
        CompletionRequest {
            model_id: model.to_string(),
            prompt_text: prompt,
            temperature: self.config.temperature,
            max_output_tokens: self.config.max_output_tokens,
            template_version: template.version,
        }
    }

    /// Runs whichever chain shape the templates define.
    pub fn run_item(&self, item: &ClauseItem, provider: &dyn Provider) -> Result<ChainRun, ChainError> {
        if self.templates.is_two_stage() {
            self.run_two_stage(item, provider)
        } else {
            self.run_single_stage(item, provider)
        }
    }

    pub fn run_single_stage(&self, item: &ClauseItem, provider: &dyn Provider) -> Result<ChainRun, ChainError> {
        if self.templates.is_two_stage() {
            return Err(ChainError::Config(format!("{} is a two-stage template", self.config.template_id)));
        }
        let template = &self.templates.stage1;
        let prompt = template.render(&SlotBindings::for_clause(&self.question, item))?;
        let request = self.request(&self.config.model_id, prompt, template);
        let result = provider
            .complete(&request)
            .map_err(|source| ChainError::Provider { stage: 1, source })?;
        let prediction = parse_response(&result.raw_text, &self.question, self.config.constraint_mode);
        Ok(ChainRun {
            clause_id: item.id.clone(),
            question_id: self.question.id.clone(),
            template_id: self.config.template_id.clone(),
            stage1_prompt: None,
            stage1_raw: None,
            stage1_latency_ms: None,
            stage2_prompt: request.prompt_text,
            final_raw: result.raw_text,
            final_finish_reason: result.finish_reason,
            stage2_latency_ms: result.latency_ms,
            prediction,
            provider_calls: 1,
        })
    }

    pub fn run_two_stage(&self, item: &ClauseItem, provider: &dyn Provider) -> Result<ChainRun, ChainError> {
        let Some(stage2) = &self.templates.stage2 else {
            return Err(ChainError::Config(format!("{} is a single-stage template", self.config.template_id)));
        };
        let stage1 = &self.templates.stage1;
        let prompt1 = stage1.render(&SlotBindings::for_clause(&self.question, item))?;
        let request1 = self.request(&self.config.model_id, prompt1, stage1);
        let summary = provider
            .complete(&request1)
            .map_err(|source| ChainError::Provider { stage: 1, source })?;
        if summary.finish_reason == FinishReason::Truncated {
            return Err(ChainError::Stage1Truncated);
        }

        let response = summary.raw_text.trim_end();
        let prompt2 = stage2.render(&SlotBindings::for_response(&self.question, response))?;
        let request2 = self.request(self.config.stage2_model(), prompt2, stage2);
        let result = provider
            .complete(&request2)
            .map_err(|source| ChainError::Provider { stage: 2, source })?;
        let prediction = parse_response(&result.raw_text, &self.question, self.config.constraint_mode);
        Ok(ChainRun {
            clause_id: item.id.clone(),
            question_id: self.question.id.clone(),
            template_id: self.config.template_id.clone(),
            stage1_prompt: Some(request1.prompt_text),
            stage1_raw: Some(summary.raw_text),
            stage1_latency_ms: Some(summary.latency_ms),
            stage2_prompt: request2.prompt_text,
            final_raw: result.raw_text,
            final_finish_reason: result.finish_reason,
            stage2_latency_ms: result.latency_ms,
            prediction,
            provider_calls: 2,
        })
    }

    fn header(&self) -> ArtifactHeader {
        let mut templates = vec![TemplateStamp {
            stage: 1,
            version: self.templates.stage1.version,
            checksum: self.templates.stage1.checksum(),
        }];
        if let Some(t) = &self.templates.stage2 {
            templates.push(TemplateStamp {
                stage: 2,
                version: t.version,
                checksum: t.checksum(),
            });
        }
        ArtifactHeader {
            config: self.config.clone(),
            templates,
            replication: self.config.is_replication(),
            created_at: Utc::now(),
        }
    }

    pub fn run_batch(&self, dataset: &Dataset, provider: &dyn Provider) -> RunArtifact {
        self.run_batch_until(dataset, provider, &AtomicBool::new(false))
    }

    /// Processes every clause annotated for the question, at most
    /// `parallelism` at a time. Once `stop` is set no new clause is started;
    /// clauses not started are recorded as failures.
    pub fn run_batch_until(&self, dataset: &Dataset, provider: &dyn Provider, stop: &AtomicBool) -> RunArtifact {
        let mut work = Vec::new();
        let mut skipped = Vec::new();
        for item in dataset.items_for_question(&self.question.id) {
            if item.concept == self.question.concept {
                work.push(item);
            } else {
                skipped.push(SkippedItem {
                    clause_id: item.id.clone(),
                    reason: format!("concept {:?} does not match question concept {:?}", item.concept, self.question.concept),
                });
            }
        }

        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Result<ChainRun, ItemFailure>>> = Mutex::new(Vec::with_capacity(work.len()));
        let workers = self.config.parallelism.min(work.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(item) = work.get(i) else { break };
                    let outcome = if stop.load(Ordering::SeqCst) {
                        Err(ItemFailure {
                            clause_id: item.id.clone(),
                            error: "cancelled before start".into(),
                        })
                    } else {
                        self.run_item(item, provider).map_err(|e| ItemFailure {
                            clause_id: item.id.clone(),
                            error: e.to_string(),
                        })
                    };
                    results.lock().expect("results poisoned").push(outcome);
                });
            }
        });

        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for r in results.into_inner().expect("results poisoned") {
            match r {
                Ok(run) => runs.push(run),
                Err(f) => failures.push(f),
            }
        }
        runs.sort_by(|a, b| a.clause_id.cmp(&b.clause_id));
        failures.sort_by(|a, b| a.clause_id.cmp(&b.clause_id));
        skipped.sort_by(|a, b| a.clause_id.cmp(&b.clause_id));
        RunArtifact {
            header: self.header(),
            runs,
            failures,
            skipped,
        }
    }
}

//! Prompt chains that answer structured multiple-choice questions about
//! contract clauses, and the metrics used to score them.

pub mod chain;
pub mod cli;
pub mod metrics;
pub mod parser;
pub mod provider;
pub mod schema;
pub mod templating;

pub use chain::{ChainConfig, ChainRun, ChainRunner, RunArtifact};
pub use metrics::{build_report, EvalReport, ResultGrid};
pub use parser::{parse_response, ConstraintMode, PredictionSet};
pub use provider::{CachedProvider, CacheStore, CompletionRequest, CompletionResult, OpenAiClient, Provider, ScriptedMock};
pub use schema::{load_dataset, load_question_bank, ClauseItem, Dataset, GoldAnnotation, QuestionBank, QuestionSpec};
pub use templating::{render, PromptTemplate, SlotBindings, TemplateStore};

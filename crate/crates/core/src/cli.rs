//! Command-line entry point.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration, 4 validation,
//! 5 provider, 6 io.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::chain::{ChainConfig, ChainError, ChainRunner, RunArtifact};
use crate::metrics::{build_report, render_report_text, EvalReport, MetricsError, ResultGrid};
use crate::parser::ConstraintMode;
use crate::provider::{
    CacheStore, CachedProvider, CompletionRequest, CompletionResult, Offline, OpenAiClient, Provider, ProviderError, RetryPolicy, ScriptedMock,
    DEFAULT_API_KEY_ENV,
};
use crate::schema::{load_dataset, load_question_bank, QuestionBank, SchemaError};
use crate::templating::TemplateStore;

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Provider(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Validation(_) => 4,
            CliError::Provider(_) => 5,
            CliError::Io(_) => 6,
        }
    }
}

impl From<SchemaError> for CliError {
    fn from(e: SchemaError) -> Self {
        match e {
            SchemaError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ChainError> for CliError {
    fn from(e: ChainError) -> Self {
        match e {
            ChainError::Provider { .. } => CliError::Provider(e.to_string()),
            ChainError::Trace(_) => CliError::Validation(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Settings file (TOML). Every field is optional and every flag overrides
/// it. Credentials are never read from here; only the name of the
/// environment variable that holds the key.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    /// Report name to API model name.
    #[serde(default)]
    pub models: BTreeMap<String, String>,
    #[serde(default)]
    pub temperature: f64,
    pub max_output_tokens: Option<u32>,
    pub parallelism: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub cache: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub constraint_mode: Option<ConstraintMode>,
    #[serde(default)]
    pub report_formats: Vec<ReportFormat>,
}

impl AppConfig {
    /// Relative paths are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut cfg: AppConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.cache, &mut cfg.templates, &mut cfg.bank].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), CliError> {
        if self.parallelism == Some(0) {
            return Err(CliError::Config("parallelism must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(CliError::Config(format!("temperature {} must be non-negative", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl ReportFormat {
    fn extension(self) -> &'static str {
        match self {
            ReportFormat::Text => "txt",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Openai,
    Mock,
}

#[derive(Debug, Parser)]
#[command(name = "clausechain", version, about = "Prompt chains for structured answers about contract clauses")]
pub struct Cli {
    /// Settings file (TOML)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the question bank
    Questions {
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// List prompt templates
    Templates {
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Run a chain over a dataset and write a trace
    Run(RunArgs),
    /// Score a trace against gold annotations
    Eval(EvalArgs),
    /// Combine traces and grid CSV files into result grids
    Report(ReportArgs),
    /// Inspect or purge the response cache
    Cache(CacheArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub question: String,
    #[arg(long)]
    pub template: String,
    /// Model name, or a key of the config's model map
    #[arg(long)]
    pub model: String,
    /// Different model for stage 2 of a two-stage chain
    #[arg(long)]
    pub stage2_model: Option<String>,
    #[arg(long, value_enum, default_value_t = ProviderKind::Openai)]
    pub provider: ProviderKind,
    /// Mock script (JSON), required with --provider mock
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Answer only from the cache; never contact the provider
    #[arg(long)]
    pub replay: bool,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["cache", "replay"])]
    pub no_cache: bool,
    /// Trace output path
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_output_tokens: Option<u32>,
    #[arg(long)]
    pub constraint_mode: Option<ConstraintMode>,
    #[arg(long)]
    pub base_url: Option<String>,
    /// Template directory replacing the bundled templates
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub bank: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub trace: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long, default_value_t = ConstraintMode::Observe)]
    pub constraint_mode: ConstraintMode,
    /// Also report micro-averaged precision and recall
    #[arg(long)]
    pub micro: bool,
    #[arg(long, value_enum)]
    pub format: Vec<ReportFormat>,
    /// Write PREFIX.txt / .csv / .json instead of printing
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub traces: Vec<PathBuf>,
    /// Gold annotations, required when traces are given
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Grid CSV file (prompt,model,question,metric,option,value)
    #[arg(long = "grid")]
    pub grids: Vec<PathBuf>,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long, default_value_t = ConstraintMode::Observe)]
    pub constraint_mode: ConstraintMode,
    #[arg(long)]
    pub micro: bool,
    /// Restrict per-option tables to these questions
    #[arg(long)]
    pub question: Vec<String>,
    #[arg(long, value_enum)]
    pub format: Vec<ReportFormat>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[command(subcommand)]
    pub action: CacheAction,
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    Stats,
    Purge {
        /// Only remove entries older than this age (e.g. 0s, 12h, 7d)
        #[arg(long, value_parser = humantime::parse_duration)]
        older_than: Option<Duration>,
    },
}

/// Parses `args` and runs the command, writing results to `out`.
pub fn run_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code() as u8;
            let target: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> ExitCode {
    let code = run_with_args(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    ExitCode::from(code)
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    match cli.command {
        Command::Questions { bank } => cmd_questions(&load_bank(bank.as_ref().or(config.bank.as_ref()))?, out),
        Command::Templates { templates } => cmd_templates(&load_templates(templates.as_ref().or(config.templates.as_ref()))?, out),
        Command::Run(args) => cmd_run(&args, &config, out),
        Command::Eval(args) => cmd_eval(&args, &config, out),
        Command::Report(args) => cmd_report(&args, &config, out),
        Command::Cache(args) => cmd_cache(&args, &config, out),
    }
}

fn load_bank(path: Option<&PathBuf>) -> Result<QuestionBank, CliError> {
    match path {
        Some(p) => Ok(load_question_bank(p)?),
        None => Ok(QuestionBank::default_bank()),
    }
}

fn load_templates(dir: Option<&PathBuf>) -> Result<TemplateStore, CliError> {
    match dir {
        Some(d) => TemplateStore::from_dir(d).map_err(|e| CliError::Config(e.to_string())),
        None => Ok(TemplateStore::bundled()),
    }
}

fn w(out: &mut dyn Write, s: &str) -> Result<(), CliError> {
    out.write_all(s.as_bytes()).map_err(|e| CliError::Io(format!("stdout: {e}")))
}

pub fn cmd_questions(bank: &QuestionBank, out: &mut dyn Write) -> Result<(), CliError> {
    let mut s = String::new();
    for (i, q) in bank.questions().iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        s.push_str(&format!("{}  [{}]\n{}\n", q.id, q.concept, q.question_text));
        for o in &q.options {
            s.push_str(&format!("  {}) {}\n", o.letter, o.text));
        }
        let mut notes = Vec::new();
        if !q.exclusive_options.is_empty() {
            let letters: Vec<String> = q.exclusive_options.iter().map(char::to_string).collect();
            notes.push(format!("exclusive: {}", letters.join(",")));
        }
        if let Some(a) = q.abstention_option {
            notes.push(format!("abstention: {a}"));
        }
        if let Some(c) = q.catch_all_option {
            notes.push(format!("catch-all: {c}"));
        }
        if !notes.is_empty() {
            s.push_str(&format!("  ({})\n", notes.join("; ")));
        }
    }
    w(out, &s)
}

pub fn cmd_templates(store: &TemplateStore, out: &mut dyn Write) -> Result<(), CliError> {
    let mut s = String::new();
    for t in store.templates() {
        let question = if t.is_generic() { "*" } else { t.question_id.as_str() };
        s.push_str(&format!("{:<14} {:<3} stage {}  v{}  {}\n", t.id, question, t.stage, t.version, &t.checksum()[..12]));
    }
    w(out, &s)
}

/// Counts calls that reach the wrapped provider.
struct Counting<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P: Provider> Provider for Counting<P> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

fn stop_flag() -> &'static Arc<AtomicBool> {
    static STOP: OnceLock<Arc<AtomicBool>> = OnceLock::new();
    STOP.get_or_init(|| {
        let flag = Arc::new(AtomicBool::new(false));
        let handler_flag = Arc::clone(&flag);
        // Another handler may already be installed by an embedding program.
        let _ = ctrlc::set_handler(move || handler_flag.store(true, Ordering::SeqCst));
        flag
    })
}

/// `SOURCE_DATE_EPOCH` pins trace timestamps for reproducible output.
fn now() -> Result<DateTime<Utc>, CliError> {
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v
            .trim()
            .parse::<i64>()
            .ok()
            .and_then(|s| DateTime::from_timestamp(s, 0))
            .ok_or_else(|| CliError::Config(format!("SOURCE_DATE_EPOCH={v} is not a unix timestamp"))),
        Err(_) => Ok(Utc::now()),
    }
}

fn default_trace_path(config: &ChainConfig) -> PathBuf {
    let label: String = config
        .model_label()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    PathBuf::from(format!("trace-{}-{}-{}.jsonl", config.template_id, config.question_id, label))
}

pub fn cmd_run(args: &RunArgs, app: &AppConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let bank = load_bank(args.bank.as_ref().or(app.bank.as_ref()))?;
    let store = load_templates(args.templates.as_ref().or(app.templates.as_ref()))?;
    let dataset = load_dataset(&args.dataset, &bank)?;

    let (model_id, model_label) = match app.models.get(&args.model) {
        Some(api) => (api.clone(), Some(args.model.clone())),
        None => (args.model.clone(), None),
    };
    let mut config = ChainConfig::new(&args.template, &args.question, model_id);
    config.model_label = model_label;
    config.stage2_model_id = args.stage2_model.as_ref().map(|m| app.models.get(m).cloned().unwrap_or_else(|| m.clone()));
    config.temperature = args.temperature.unwrap_or(app.temperature);
    config.max_output_tokens = args.max_output_tokens.or(app.max_output_tokens);
    config.constraint_mode = args.constraint_mode.or(app.constraint_mode).unwrap_or(ConstraintMode::Enforce);
    config.parallelism = args.parallelism.or(app.parallelism).unwrap_or(config.parallelism);
    if let Some(q) = bank.get(&config.question_id) {
        config.question_id = q.id.clone();
    }
    let runner = ChainRunner::new(config, &bank, &store)?;
    let config = runner.config().clone();
    if dataset.items_for_question(&config.question_id).is_empty() {
        return Err(CliError::Validation(format!("{} has no clauses annotated for {}", args.dataset.display(), config.question_id)));
    }
    let trace_path = args.trace.clone().unwrap_or_else(|| default_trace_path(&config));

    let base_url = args.base_url.clone().or_else(|| app.base_url.clone()).unwrap_or_else(|| DEFAULT_BASE_URL.to_string());
    let upstream: Box<dyn Provider> = match (args.provider, args.replay) {
        (ProviderKind::Mock, replay) => {
            let script = args
                .script
                .as_ref()
                .ok_or_else(|| CliError::Config("--provider mock requires --script".into()))?;
            let mock = ScriptedMock::load_script(script).map_err(|e| CliError::Config(e.to_string()))?;
            if replay {
                Box::new(Offline::new(mock.id()))
            } else {
                Box::new(mock)
            }
        }
        (ProviderKind::Openai, true) => Box::new(Offline::new(OpenAiClient::provider_id_for(&base_url))),
        (ProviderKind::Openai, false) => {
            let key_var = app.api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV);
            let timeout = Duration::from_secs(app.timeout_secs.unwrap_or(120));
            Box::new(OpenAiClient::from_env(&base_url, key_var, timeout, RetryPolicy::default()).map_err(|e| CliError::Config(e.to_string()))?)
        }
    };

    let cache_path = if args.no_cache { None } else { args.cache.clone().or_else(|| app.cache.clone()) };
    if args.replay && cache_path.is_none() {
        return Err(CliError::Config("--replay requires a cache (--cache or the config's cache path)".into()));
    }
    let counting = Counting { inner: upstream, calls: AtomicUsize::new(0) };
    let stop = stop_flag();
    let (mut artifact, hits) = match &cache_path {
        Some(path) => {
            let cache = Arc::new(CacheStore::open(path).map_err(|e| CliError::Io(e.to_string()))?);
            let cached = CachedProvider::new(&counting, cache);
            let artifact = runner.run_batch_until(&dataset, &cached, stop);
            (artifact, cached.hits())
        }
        None => (runner.run_batch_until(&dataset, &counting, stop), 0),
    };
    artifact.header.created_at = now()?;
    artifact.write(&trace_path).map_err(|e| io_err(&trace_path, e))?;

    let counts = artifact.counts();
    let calls: u32 = artifact.runs.iter().map(|r| r.provider_calls).sum();
    let upstream_calls = if args.replay { 0 } else { counting.calls.load(Ordering::SeqCst) };
    w(
        out,
        &format!(
            "{} {} {}: {} runs, {} scored, {} abstained, {} unparseable, {} constraint violations, {} failures, {} skipped; {} provider calls, {} upstream calls, {} cached; trace {}\n",
            config.template_id,
            config.question_id,
            config.model_label(),
            artifact.runs.len(),
            counts.scored,
            counts.abstained,
            counts.unparseable,
            counts.constraint_violations,
            counts.failures,
            counts.skipped,
            calls,
            upstream_calls,
            hits,
            trace_path.display()
        ),
    )?;
    if stop.load(Ordering::SeqCst) {
        return Err(CliError::Provider(format!("interrupted; partial trace written to {}", trace_path.display())));
    }
    if let Some(first) = artifact.failures.first() {
        return Err(CliError::Provider(format!(
            "{} of {} items failed (first: {}: {})",
            artifact.failures.len(),
            artifact.failures.len() + artifact.runs.len(),
            first.clause_id,
            first.error
        )));
    }
    Ok(())
}

fn formats(requested: &[ReportFormat], app: &AppConfig) -> Vec<ReportFormat> {
    let mut f = if !requested.is_empty() {
        requested.to_vec()
    } else if !app.report_formats.is_empty() {
        app.report_formats.clone()
    } else {
        vec![ReportFormat::Text]
    };
    f.dedup();
    f
}

fn emit(rendered: Vec<(ReportFormat, String)>, output: Option<&PathBuf>, out: &mut dyn Write) -> Result<(), CliError> {
    match output {
        Some(prefix) => {
            for (format, text) in rendered {
                let path = prefix.with_extension(format.extension());
                std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
                w(out, &format!("wrote {}\n", path.display()))?;
            }
            Ok(())
        }
        None => {
            let n = rendered.len();
            for (i, (_, text)) in rendered.into_iter().enumerate() {
                w(out, &text)?;
                if i + 1 < n && !text.ends_with("\n\n") {
                    w(out, "\n")?;
                }
            }
            Ok(())
        }
    }
}

fn read_trace(path: &Path) -> Result<RunArtifact, CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!("{}: no such file", path.display())));
    }
    RunArtifact::read(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn evaluate(trace: &Path, dataset: &Path, bank: &QuestionBank, mode: ConstraintMode) -> Result<EvalReport, CliError> {
    let artifact = read_trace(trace)?;
    let dataset = load_dataset(dataset, bank)?;
    build_report(&artifact, &dataset, bank, mode).map_err(|e| CliError::Validation(format!("{}: {e}", trace.display())))
}

pub fn cmd_eval(args: &EvalArgs, app: &AppConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let bank = load_bank(args.bank.as_ref().or(app.bank.as_ref()))?;
    let report = evaluate(&args.trace, &args.dataset, &bank, args.constraint_mode)?;
    let mut rendered = Vec::new();
    for format in formats(&args.format, app) {
        let text = match format {
            ReportFormat::Text => render_report_text(&report, args.micro),
            ReportFormat::Csv => ResultGrid::from_reports(std::slice::from_ref(&report), args.micro)?.to_csv(),
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
                s.push('\n');
                s
            }
        };
        rendered.push((format, text));
    }
    emit(rendered, args.output.as_ref(), out)
}

pub fn cmd_report(args: &ReportArgs, app: &AppConfig, out: &mut dyn Write) -> Result<(), CliError> {
    if args.traces.is_empty() && args.grids.is_empty() {
        return Err(CliError::Config("report needs at least one trace or --grid file".into()));
    }
    let mut grid = ResultGrid::default();
    if !args.traces.is_empty() {
        let dataset = args
            .dataset
            .as_ref()
            .ok_or_else(|| CliError::Config("--dataset is required to score traces".into()))?;
        let bank = load_bank(args.bank.as_ref().or(app.bank.as_ref()))?;
        let mut reports = Vec::new();
        for trace in &args.traces {
            reports.push(evaluate(trace, dataset, &bank, args.constraint_mode)?);
        }
        grid.merge(ResultGrid::from_reports(&reports, args.micro)?)?;
    }
    for path in &args.grids {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let g = ResultGrid::from_csv(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        grid.merge(g)?;
    }
    let questions = if args.question.is_empty() { grid.questions() } else { args.question.clone() };
    let mut rendered = Vec::new();
    for format in formats(&args.format, app) {
        let text = match format {
            ReportFormat::Text => {
                let mut s = grid.summary_table().render();
                for q in &questions {
                    let table = grid.option_table(q);
                    if !table.rows.is_empty() {
                        s.push_str(&format!("\n{q}\n"));
                        s.push_str(&table.render());
                    }
                }
                s
            }
            ReportFormat::Csv => grid.to_csv(),
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(grid.cells()).expect("grid serializes");
                s.push('\n');
                s
            }
        };
        rendered.push((format, text));
    }
    emit(rendered, args.output.as_ref(), out)
}

pub fn cmd_cache(args: &CacheArgs, app: &AppConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let path = args
        .cache
        .clone()
        .or_else(|| app.cache.clone())
        .ok_or_else(|| CliError::Config("no cache path (--cache or the config's cache path)".into()))?;
    let store = CacheStore::open(&path).map_err(|e| CliError::Io(e.to_string()))?;
    match args.action {
        CacheAction::Stats => {
            let stats = store.stats().map_err(|e| CliError::Io(e.to_string()))?;
            w(out, &format!("{}: {} entries, {} bytes\n", path.display(), stats.entries, stats.bytes))
        }
        CacheAction::Purge { older_than } => {
            let removed = store.purge(older_than, Utc::now()).map_err(|e| CliError::Io(e.to_string()))?;
            w(out, &format!("{}: removed {} entries, {} remain\n", path.display(), removed, store.len()))
        }
    }
}

//! Chat-completion backends.
//!
//! [`OpenAiClient`] speaks the OpenAI-compatible `/chat/completions` protocol,
//! [`ScriptedMock`] answers from a script for offline runs and tests, and
//! [`CachedProvider`] layers the persistent [`CacheStore`] over either.
//! Every call is stateless: the payload holds a single user message with the
//! full rendered prompt and nothing from earlier calls.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("server error {status}: {message}")]
    Server { status: u16, message: String },
    #[error("request rejected ({status}): {message}")]
    InvalidRequest { status: u16, message: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no scripted response matches the prompt: {0}")]
    Unmatched(String),
    #[error("cache miss in replay mode for key {0}")]
    CacheMiss(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("provider configuration error: {0}")]
    Config(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::Network(_) | ProviderError::RateLimited(_) | ProviderError::Server { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt_text: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
    pub template_version: u32,
}

impl CompletionRequest {
    pub fn new(model_id: impl Into<String>, prompt_text: impl Into<String>, template_version: u32) -> Self {
        Self {
            model_id: model_id.into(),
            prompt_text: prompt_text.into(),
            temperature: 0.0,
            max_output_tokens: None,
            template_version,
        }
    }

    pub fn check(&self) -> Result<(), ProviderError> {
        if self.prompt_text.is_empty() {
            return Err(ProviderError::Config("prompt text is empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ProviderError::Config(format!("temperature {} is not a non-negative number", self.temperature)));
        }
        if self.max_output_tokens == Some(0) {
            return Err(ProviderError::Config("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over the cache-relevant fields, hex encoded.
    ///
    /// Canonical encoding: the line `clausechain-cache-v1`, then one line per
    /// field in the order provider_id, model_id, temperature,
    /// max_output_tokens, template_version, prompt_text, each written as
    /// `name:<byte length>:<value>`. Temperature uses Rust's `{:?}` float
    /// form (`0.0`, `0.5`); an unset token limit is `none`.
    pub fn cache_key(&self, provider_id: &str) -> String {
        let max_tokens = self.max_output_tokens.map_or_else(|| "none".to_string(), |n| n.to_string());
        let temperature = format!("{:?}", self.temperature);
        let version = self.template_version.to_string();
        let fields: [(&str, &str); 6] = [
            ("provider_id", provider_id),
            ("model_id", &self.model_id),
            ("temperature", &temperature),
            ("max_output_tokens", &max_tokens),
            ("template_version", &version),
            ("prompt_text", &self.prompt_text),
        ];
        let mut hasher = Sha256::new();
        hasher.update(b"clausechain-cache-v1\n");
        for (name, value) in fields {
            hasher.update(format!("{name}:{}:", value.len()).as_bytes());
            hasher.update(value.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Complete,
    Truncated,
    Refused,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub raw_text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    #[serde(default)]
    pub from_cache: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl CompletionResult {
    pub fn text(raw_text: impl Into<String>) -> Self {
        Self {
            raw_text: raw_text.into(),
            finish_reason: FinishReason::Complete,
            latency_ms: 0,
            from_cache: false,
            usage: None,
        }
    }

    pub fn latency(&self) -> Duration {
        Duration::from_millis(self.latency_ms)
    }
}

/// A chat-completion backend. Implementations must be safe to call from
/// several threads at once.
pub trait Provider: Send + Sync {
    /// Stable identifier; part of the cache key.
    fn id(&self) -> String;

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: Provider + ?Sized> Provider for &P {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        (**self).complete(request)
    }
}

// ---------------------------------------------------------------------------
// OpenAI-compatible client

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub backoff_cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base: Duration::from_secs(1),
            backoff_cap: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0 for the first retry).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(31)).unwrap_or(u32::MAX);
        self.backoff_base.saturating_mul(factor).min(self.backoff_cap)
    }
}

/// The JSON body sent for `request`. A pure function of the request.
pub fn build_payload(request: &CompletionRequest) -> Value {
    let mut body = json!({
        "model": request.model_id,
        "messages": [{ "role": "user", "content": request.prompt_text }],
        "temperature": request.temperature,
    });
    if let Some(n) = request.max_output_tokens {
        body["max_tokens"] = json!(n);
    }
    body
}

fn parse_chat_response(body: &str) -> Result<(String, FinishReason, Option<Usage>), ProviderError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| ProviderError::MalformedResponse("response has no choices".into()))?;
    let message = choice
        .get("message")
        .ok_or_else(|| ProviderError::MalformedResponse("choice has no message".into()))?;
    let content = match message.get("content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => return Err(ProviderError::MalformedResponse(format!("content is not a string: {other}"))),
    };
    let refused = message.get("refusal").is_some_and(|r| !r.is_null());
    let finish = match choice.get("finish_reason").and_then(Value::as_str) {
        _ if refused => FinishReason::Refused,
        Some("stop") => FinishReason::Complete,
        Some("length") => FinishReason::Truncated,
        Some("content_filter") => FinishReason::Refused,
        Some(_) | None if !content.is_empty() => FinishReason::Complete,
        _ => FinishReason::Error,
    };
    let usage = v.get("usage").and_then(|u| {
        Some(Usage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
            total_tokens: u.get("total_tokens")?.as_u64()?,
        })
    });
    Ok((content, finish, usage))
}

pub struct OpenAiClient {
    base_url: String,
    api_key: String,
    http: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl std::fmt::Debug for OpenAiClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiClient")
            .field("base_url", &self.base_url)
            .field("api_key", &"<redacted>")
            .field("retry", &self.retry)
            .finish()
    }
}

impl OpenAiClient {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, timeout: Duration, retry: RetryPolicy) -> Result<Self, ProviderError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            http,
            retry,
        })
    }

    /// Reads the credential from the environment variable `key_var`.
    pub fn from_env(base_url: impl Into<String>, key_var: &str, timeout: Duration, retry: RetryPolicy) -> Result<Self, ProviderError> {
        let key = std::env::var(key_var)
            .map_err(|_| ProviderError::Config(format!("environment variable {key_var} is not set")))?;
        Self::new(base_url, key, timeout, retry)
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }

    pub fn provider_id_for(base_url: &str) -> String {
        format!("openai:{}", base_url.trim_end_matches('/'))
    }

    fn attempt(&self, payload: &Value) -> Result<CompletionResult, ProviderError> {
        let started = Instant::now();
        let resp = self
            .http
            .post(self.endpoint())
            .bearer_auth(&self.api_key)
            .json(payload)
            .send()
            .map_err(|e| ProviderError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| ProviderError::Network(e.to_string()))?;
        let latency_ms = started.elapsed().as_millis() as u64;
        match status {
            200..=299 => {
                let (raw_text, finish_reason, usage) = parse_chat_response(&body)?;
                Ok(CompletionResult {
                    raw_text,
                    finish_reason,
                    latency_ms,
                    from_cache: false,
                    usage,
                })
            }
            401 | 403 => Err(ProviderError::Auth(truncate(&body))),
            429 => Err(ProviderError::RateLimited(truncate(&body))),
            500..=599 => Err(ProviderError::Server { status, message: truncate(&body) }),
            _ => Err(ProviderError::InvalidRequest { status, message: truncate(&body) }),
        }
    }
}

fn truncate(s: &str) -> String {
    const MAX: usize = 300;
    match s.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

impl Provider for OpenAiClient {
    fn id(&self) -> String {
        Self::provider_id_for(&self.base_url)
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        request.check()?;
        let payload = build_payload(request);
        let mut retry = 0;
        loop {
            match self.attempt(&payload) {
                Err(e) if e.is_retryable() && retry + 1 < self.retry.max_attempts => {
                    std::thread::sleep(self.retry.delay(retry));
                    retry += 1;
                }
                other => return other,
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Scripted mock

type Predicate = Box<dyn Fn(&str) -> bool + Send + Sync>;

/// What a scripted rule answers with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Text(String),
    Fail(ProviderError),
}

struct Rule {
    predicate: Predicate,
    reply: Reply,
}

/// Deterministic provider answering from an ordered list of rules; the first
/// matching rule wins. Every request is recorded in call order.
pub struct ScriptedMock {
    id: String,
    rules: Vec<Rule>,
    default: Option<Reply>,
    log: Mutex<Vec<CompletionRequest>>,
}

impl std::fmt::Debug for ScriptedMock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedMock")
            .field("id", &self.id)
            .field("rules", &self.rules.len())
            .field("default", &self.default)
            .finish()
    }
}

impl Default for ScriptedMock {
    fn default() -> Self {
        Self::new()
    }
}

impl ScriptedMock {
    pub fn new() -> Self {
        Self {
            id: "mock".into(),
            rules: Vec::new(),
            default: None,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn when(mut self, predicate: impl Fn(&str) -> bool + Send + Sync + 'static, reply: Reply) -> Self {
        self.rules.push(Rule {
            predicate: Box::new(predicate),
            reply,
        });
        self
    }

    pub fn when_contains(self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        let needle = needle.into();
        self.when(move |p| p.contains(&needle), Reply::Text(response.into()))
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default = Some(Reply::Text(response.into()));
        self
    }

    /// Builds a mock from a script file document; the id embeds a digest of
    /// the script so cached completions never outlive a script edit.
    pub fn from_script(script: &MockScript) -> Self {
        let digest = hex::encode(Sha256::digest(serde_json::to_vec(script).expect("script serializes")));
        let mut mock = Self::new().with_id(format!("mock:{}", &digest[..16]));
        for rule in &script.rules {
            let needles = rule.contains.clone().into_vec();
            let absent = rule.not_contains.clone().map(OneOrMany::into_vec).unwrap_or_default();
            let reply = match (&rule.response, &rule.error) {
                (_, Some(kind)) => Reply::Fail(script_error(kind)),
                (Some(text), None) => Reply::Text(text.clone()),
                (None, None) => Reply::Text(String::new()),
            };
            mock = mock.when(
                move |p| needles.iter().all(|n| p.contains(n.as_str())) && !absent.iter().any(|n| p.contains(n.as_str())),
                reply,
            );
        }
        if let Some(d) = &script.default {
            mock = mock.with_default(d.clone());
        }
        mock
    }

    pub fn load_script(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("cannot read mock script {}: {e}", path.display())))?;
        let script: MockScript = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Config(format!("malformed mock script {}: {e}", path.display())))?;
        Ok(Self::from_script(&script))
    }

    /// Requests received so far, in call order.
    pub fn calls(&self) -> Vec<CompletionRequest> {
        self.log.lock().expect("mock log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("mock log poisoned").len()
    }

    /// Wire payloads the requests would have produced.
    pub fn payloads(&self) -> Vec<Value> {
        self.calls().iter().map(build_payload).collect()
    }
}

fn script_error(kind: &str) -> ProviderError {
    match kind {
        "auth" => ProviderError::Auth("scripted".into()),
        "rate_limit" => ProviderError::RateLimited("scripted".into()),
        "server" => ProviderError::Server { status: 500, message: "scripted".into() },
        "malformed" => ProviderError::MalformedResponse("scripted".into()),
        _ => ProviderError::Network(format!("scripted {kind}")),
    }
}

impl Provider for ScriptedMock {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        request.check()?;
        self.log.lock().expect("mock log poisoned").push(request.clone());
        let reply = self
            .rules
            .iter()
            .find(|r| (r.predicate)(&request.prompt_text))
            .map(|r| &r.reply)
            .or(self.default.as_ref());
        match reply {
            Some(Reply::Text(text)) => Ok(CompletionResult::text(text.clone())),
            Some(Reply::Fail(e)) => Err(e.clone()),
            None => Err(ProviderError::Unmatched(truncate(&request.prompt_text))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    pub fn into_vec(self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => vec![s],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Mock script file: rules are tried in order; a rule matches when the
/// prompt contains every `contains` string and none of `not_contains`.
///
/// ```json
/// {"rules": [{"contains": "BEGIN TEXT", "response": "summary"},
///            {"contains": ["BEGIN RESPONSE", "x"], "error": "network"}],
///  "default": "[{\"bucket\": \"g\"}]"}
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub contains: OneOrMany,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub not_contains: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// One of network, auth, rate_limit, server, malformed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Stands in for an upstream that must not be contacted (replay mode).
#[derive(Debug, Clone)]
pub struct Offline {
    id: String,
}

impl Offline {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into() }
    }
}

impl Provider for Offline {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        Err(ProviderError::CacheMiss(request.cache_key(&self.id)))
    }
}

// ---------------------------------------------------------------------------
// Response cache

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSummary {
    pub provider_id: String,
    pub model_id: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
    pub template_version: u32,
    pub prompt_sha256: String,
    pub prompt_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: RequestSummary,
    pub result: CompletionResult,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub entries: usize,
    pub bytes: u64,
}

/// Append-only JSON-lines cache with an in-memory index. Reads are
/// concurrent; writes go through one writer. Later lines override earlier
/// ones with the same key.
pub struct CacheStore {
    path: Option<PathBuf>,
    index: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<Option<BufWriter<File>>>,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for CacheStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CacheStore").field("path", &self.path).field("entries", &self.len()).finish()
    }
}

fn cache_io(path: &Path, e: impl std::fmt::Display) -> ProviderError {
    ProviderError::Cache(format!("{}: {e}", path.display()))
}

impl CacheStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            index: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            inflight: Mutex::new(HashMap::new()),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref().to_path_buf();
        let mut index = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| cache_io(&path, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(line)
                    .map_err(|e| cache_io(&path, format!("line {}: {e}", i + 1)))?;
                index.insert(entry.key.clone(), entry);
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| cache_io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| cache_io(&path, e))?;
        Ok(Self {
            path: Some(path),
            index: RwLock::new(index),
            writer: Mutex::new(Some(BufWriter::new(file))),
            inflight: Mutex::new(HashMap::new()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.index.read().expect("cache index poisoned").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache index poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn put(&self, entry: CacheEntry) -> Result<(), ProviderError> {
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        if let (Some(w), Some(path)) = (writer.as_mut(), self.path.as_deref()) {
            let line = serde_json::to_string(&entry).map_err(|e| cache_io(path, e))?;
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| cache_io(path, e))?;
        }
        self.index.write().expect("cache index poisoned").insert(entry.key.clone(), entry);
        Ok(())
    }

    pub fn stats(&self) -> Result<CacheStats, ProviderError> {
        let bytes = match &self.path {
            Some(p) if p.exists() => std::fs::metadata(p).map_err(|e| cache_io(p, e))?.len(),
            _ => 0,
        };
        Ok(CacheStats { entries: self.len(), bytes })
    }

    /// Removes entries at least `older_than` old (all entries when `None`)
    /// and rewrites the file. Returns the number removed.
    pub fn purge(&self, older_than: Option<Duration>, now: DateTime<Utc>) -> Result<usize, ProviderError> {
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        let mut index = self.index.write().expect("cache index poisoned");
        let before = index.len();
        match older_than {
            None => index.clear(),
            Some(age) => {
                let age = chrono::Duration::from_std(age).unwrap_or(chrono::Duration::MAX);
                index.retain(|_, e| now.signed_duration_since(e.created_at) < age);
            }
        }
        let removed = before - index.len();
        if let Some(path) = &self.path {
            let mut kept: Vec<&CacheEntry> = index.values().collect();
            kept.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.key.cmp(&b.key)));
            let tmp = path.with_extension("tmp");
            {
                let mut out = BufWriter::new(File::create(&tmp).map_err(|e| cache_io(&tmp, e))?);
                for e in kept {
                    let line = serde_json::to_string(e).map_err(|e| cache_io(&tmp, e))?;
                    writeln!(out, "{line}").map_err(|e| cache_io(&tmp, e))?;
                }
                out.flush().map_err(|e| cache_io(&tmp, e))?;
            }
            std::fs::rename(&tmp, path).map_err(|e| cache_io(path, e))?;
            let file = OpenOptions::new().append(true).open(path).map_err(|e| cache_io(path, e))?;
            *writer = Some(BufWriter::new(file));
        }
        Ok(removed)
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        self.inflight
            .lock()
            .expect("inflight map poisoned")
            .entry(key.to_string())
            .or_default()
            .clone()
    }

    fn release_key(&self, key: &str) {
        self.inflight.lock().expect("inflight map poisoned").remove(key);
    }
}

/// Serves repeated requests from a [`CacheStore`]. Concurrent identical
/// requests wait for the first one (single-flight), so each distinct key
/// reaches the upstream at most once.
pub struct CachedProvider<P> {
    inner: P,
    store: Arc<CacheStore>,
    hits: AtomicUsize,
    upstream: AtomicUsize,
}

impl<P: Provider> CachedProvider<P> {
    pub fn new(inner: P, store: Arc<CacheStore>) -> Self {
        Self {
            inner,
            store,
            hits: AtomicUsize::new(0),
            upstream: AtomicUsize::new(0),
        }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn store(&self) -> &Arc<CacheStore> {
        &self.store
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    /// Calls forwarded to the wrapped provider.
    pub fn upstream_calls(&self) -> usize {
        self.upstream.load(Ordering::SeqCst)
    }

    fn hit(&self, entry: CacheEntry) -> CompletionResult {
        self.hits.fetch_add(1, Ordering::SeqCst);
        CompletionResult {
            from_cache: true,
            ..entry.result
        }
    }
}

impl<P: Provider> Provider for CachedProvider<P> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        request.check()?;
        let provider_id = self.inner.id();
        let key = request.cache_key(&provider_id);
        if let Some(entry) = self.store.get(&key) {
            return Ok(self.hit(entry));
        }
        let lock = self.store.key_lock(&key);
        let _guard = lock.lock().expect("key lock poisoned");
        if let Some(entry) = self.store.get(&key) {
            return Ok(self.hit(entry));
        }
        self.upstream.fetch_add(1, Ordering::SeqCst);
        let result = self.inner.complete(request);
        if let Ok(result) = &result {
            self.store.put(CacheEntry {
                key: key.clone(),
                request: RequestSummary {
                    provider_id,
                    model_id: request.model_id.clone(),
                    temperature: request.temperature,
                    max_output_tokens: request.max_output_tokens,
                    template_version: request.template_version,
                    prompt_sha256: hex::encode(Sha256::digest(request.prompt_text.as_bytes())),
                    prompt_bytes: request.prompt_text.len(),
                },
                result: result.clone(),
                created_at: Utc::now(),
            })?;
        }
        self.store.release_key(&key);
        result
    }
}

//! Prompt template assets and slot rendering.
//!
//! Each asset is a UTF-8 file whose first line is a header:
//!
//! ```text
//! #! id=P3 question=Q1 stage=2 version=1
//! ```
//!
//! `question=*` marks a question-generic asset (P1 and its explanation
//! variant). The remainder of the file is the body; one trailing newline is
//! dropped. Slots are written `{{NAME}}` with NAME one of `CLAUSE_NAME`,
//! `CLAUSE`, `QUESTION`, `OPTIONS`, `RESPONSE`. Contract text routinely uses
//! square brackets, so bare `[Clause]` markers are not used.
//! Bindings are inserted once and never rescanned, so a binding may itself
//! contain `{{...}}`.

use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::schema::{ClauseItem, OptionSpec, QuestionSpec};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("no template {id} for question {question_id}{}", stage.map(|s| format!(" (stage {s})")).unwrap_or_default())]
    NotFound {
        id: String,
        question_id: String,
        stage: Option<u8>,
    },
    #[error("template {0}: missing binding for slot {1}")]
    MissingBinding(String, Slot),
    #[error("template asset {asset}: unknown slot marker {marker:?}")]
    UnknownSlot { asset: String, marker: String },
    #[error("template asset {asset}: {message}")]
    Malformed { asset: String, message: String },
    #[error("failed to read template directory: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    ClauseName,
    Clause,
    Question,
    Options,
    Response,
}

impl Slot {
    pub const ALL: [Slot; 5] = [Slot::ClauseName, Slot::Clause, Slot::Question, Slot::Options, Slot::Response];

    pub fn name(self) -> &'static str {
        match self {
            Slot::ClauseName => "CLAUSE_NAME",
            Slot::Clause => "CLAUSE",
            Slot::Question => "QUESTION",
            Slot::Options => "OPTIONS",
            Slot::Response => "RESPONSE",
        }
    }

    pub fn marker(self) -> String {
        format!("{{{{{}}}}}", self.name())
    }

    fn from_name(name: &str) -> Option<Slot> {
        Slot::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Part {
    Literal(String),
    Slot(Slot),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    /// Question this template is bound to. Generic assets are bound on lookup.
    pub question_id: String,
    pub stage: u8,
    pub version: u32,
    pub body: String,
    generic: bool,
    parts: Vec<Part>,
}

impl PromptTemplate {
    /// Parses an asset file (header line plus body).
    pub fn parse_asset(name: &str, text: &str) -> Result<Self, TemplateError> {
        let malformed = |message: String| TemplateError::Malformed {
            asset: name.to_string(),
            message,
        };
        let (header, body) = text
            .split_once('\n')
            .ok_or_else(|| malformed("missing header line".into()))?;
        let header = header
            .strip_prefix("#!")
            .ok_or_else(|| malformed("header must start with '#!'".into()))?;
        let (mut id, mut question, mut stage, mut version) = (None, None, None, None);
        for field in header.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| malformed(format!("bad header field {field:?}")))?;
            match k {
                "id" => id = Some(v.to_string()),
                "question" => question = Some(v.to_string()),
                "stage" => stage = v.parse::<u8>().ok(),
                "version" => version = v.parse::<u32>().ok(),
                _ => return Err(malformed(format!("unknown header key {k:?}"))),
            }
        }
        let (Some(id), Some(question), Some(stage), Some(version)) = (id, question, stage, version) else {
            return Err(malformed("header needs id, question, stage and version".into()));
        };
        if !(1..=2).contains(&stage) {
            return Err(malformed(format!("stage must be 1 or 2, got {stage}")));
        }
        let body = body.strip_suffix('\n').unwrap_or(body).to_string();
        let parts = parse_parts(name, &body)?;
        let slots: Vec<Slot> = parts
            .iter()
            .filter_map(|p| match p {
                Part::Slot(s) => Some(*s),
                Part::Literal(_) => None,
            })
            .collect();
        if stage == 1 && slots.contains(&Slot::Response) {
            return Err(malformed("RESPONSE slot is only allowed in stage-2 templates".into()));
        }
        if stage == 2 && slots.contains(&Slot::Clause) {
            return Err(malformed("stage-2 templates must not contain the CLAUSE slot".into()));
        }
        let generic = question == "*";
        Ok(Self {
            id,
            question_id: question,
            stage,
            version,
            body,
            generic,
            parts,
        })
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.parts.iter().filter_map(|p| match p {
            Part::Slot(s) => Some(*s),
            Part::Literal(_) => None,
        })
    }

    pub fn uses(&self, slot: Slot) -> bool {
        self.slots().any(|s| s == slot)
    }

    pub fn is_generic(&self) -> bool {
        self.generic
    }

    /// SHA-256 of the body, hex encoded.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.body.as_bytes()))
    }

    pub fn render(&self, bindings: &SlotBindings) -> Result<String, TemplateError> {
        render(self, bindings)
    }
}

fn parse_parts(asset: &str, body: &str) -> Result<Vec<Part>, TemplateError> {
    let mut parts = Vec::new();
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            return Err(TemplateError::Malformed {
                asset: asset.to_string(),
                message: "unterminated slot marker".into(),
            });
        };
        let name = &after[..end];
        let slot = Slot::from_name(name).ok_or_else(|| TemplateError::UnknownSlot {
            asset: asset.to_string(),
            marker: format!("{{{{{name}}}}}"),
        })?;
        if start > 0 {
            parts.push(Part::Literal(rest[..start].to_string()));
        }
        parts.push(Part::Slot(slot));
        rest = &after[end + 2..];
    }
    if !rest.is_empty() {
        parts.push(Part::Literal(rest.to_string()));
    }
    Ok(parts)
}

/// Values for the slots of one render.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotBindings {
    pub clause_name: Option<String>,
    pub clause: Option<String>,
    pub question: Option<String>,
    pub options_text: Option<String>,
    pub response: Option<String>,
}

impl SlotBindings {
    /// Bindings for a first-stage (or single-stage) render of `item`.
    pub fn for_clause(question: &QuestionSpec, item: &ClauseItem) -> Self {
        Self {
            clause_name: Some(question.clause_name()),
            clause: Some(item.clause_text.clone()),
            question: Some(question.question_text.clone()),
            options_text: Some(render_options(&question.options)),
            response: None,
        }
    }

    /// Bindings for a second-stage render: the summary replaces the clause.
    pub fn for_response(question: &QuestionSpec, response: impl Into<String>) -> Self {
        Self {
            clause_name: Some(question.clause_name()),
            clause: None,
            question: Some(question.question_text.clone()),
            options_text: Some(render_options(&question.options)),
            response: Some(response.into()),
        }
    }

    fn get(&self, slot: Slot) -> Option<&str> {
        match slot {
            Slot::ClauseName => self.clause_name.as_deref(),
            Slot::Clause => self.clause.as_deref(),
            Slot::Question => self.question.as_deref(),
            Slot::Options => self.options_text.as_deref(),
            Slot::Response => self.response.as_deref(),
        }
    }
}

/// One `"<letter>) <text>"` line per option, in bank order.
pub fn render_options(options: &[OptionSpec]) -> String {
    options
        .iter()
        .map(|o| format!("{}) {}", o.letter, o.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render(template: &PromptTemplate, bindings: &SlotBindings) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.body.len() + 1024);
    for part in &template.parts {
        match part {
            Part::Literal(s) => out.push_str(s),
            Part::Slot(slot) => {
                let value = bindings
                    .get(*slot)
                    .ok_or_else(|| TemplateError::MissingBinding(template.id.clone(), *slot))?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

/// The stage templates of one chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainTemplates {
    pub stage1: PromptTemplate,
    pub stage2: Option<PromptTemplate>,
}

impl ChainTemplates {
    pub fn is_two_stage(&self) -> bool {
        self.stage2.is_some()
    }
}

macro_rules! bundled_assets {
    ($($file:literal),* $(,)?) => {
        &[$(($file, include_str!(concat!("../templates/", $file)))),*]
    };
}

const BUNDLED: &[(&str, &str)] = bundled_assets!(
    "P1.any.stage1.txt",
    "P1-EXPLAIN.any.stage1.txt",
    "P2.Q1.stage1.txt",
    "P2.Q2.stage1.txt",
    "P2.Q3.stage1.txt",
    "P2.Q4.stage1.txt",
    "P3.Q1.stage1.txt",
    "P3.Q1.stage2.txt",
    "P3.Q2.stage1.txt",
    "P3.Q2.stage2.txt",
    "P3.Q3.stage1.txt",
    "P3.Q3.stage2.txt",
    "P3.Q4.stage1.txt",
    "P3.Q4.stage2.txt",
    "P4.Q1.stage1.txt",
    "P4.Q1.stage2.txt",
    "P4.Q2.stage1.txt",
    "P4.Q2.stage2.txt",
    "P4.Q3.stage1.txt",
    "P4.Q3.stage2.txt",
    "P4.Q4.stage1.txt",
    "P4.Q4.stage2.txt",
    "P4-PER-PARTY.Q1.stage1.txt",
    "P4-PER-PARTY.Q1.stage2.txt",
    "P5.Q4.stage1.txt",
    "P5.Q4.stage2.txt",
);

/// Immutable collection of template assets.
#[derive(Debug, Clone)]
pub struct TemplateStore {
    templates: Vec<PromptTemplate>,
}

impl TemplateStore {
    /// The assets compiled into the crate.
    pub fn bundled() -> Self {
        let templates = BUNDLED
            .iter()
            .map(|(name, text)| PromptTemplate::parse_asset(name, text).expect("bundled template asset is valid"))
            .collect();
        Self { templates }
    }

    pub fn from_assets<'a>(assets: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, TemplateError> {
        let mut templates: Vec<PromptTemplate> = Vec::new();
        for (name, text) in assets {
            let t = PromptTemplate::parse_asset(name, text)?;
            if templates
                .iter()
                .any(|o| o.id == t.id && o.question_id == t.question_id && o.stage == t.stage)
            {
                return Err(TemplateError::Malformed {
                    asset: name.to_string(),
                    message: format!("duplicate asset for {} {} stage {}", t.id, t.question_id, t.stage),
                });
            }
            templates.push(t);
        }
        Ok(Self { templates })
    }

    /// Loads every `*.txt` file in `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let mut files = Vec::new();
        let entries = std::fs::read_dir(dir).map_err(|e| TemplateError::Io(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| TemplateError::Io(e.to_string()))?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                let text = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io(format!("{}: {e}", path.display())))?;
                let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
                files.push((name, text));
            }
        }
        files.sort();
        Self::from_assets(files.iter().map(|(n, t)| (n.as_str(), t.as_str())))
    }

    pub fn templates(&self) -> &[PromptTemplate] {
        &self.templates
    }

    pub fn stage(&self, id: &str, question_id: &str, stage: u8) -> Result<PromptTemplate, TemplateError> {
        let exact = self.templates.iter().find(|t| {
            t.id.eq_ignore_ascii_case(id) && t.question_id.eq_ignore_ascii_case(question_id) && t.stage == stage
        });
        let found = exact.or_else(|| {
            self.templates
                .iter()
                .find(|t| t.generic && t.id.eq_ignore_ascii_case(id) && t.stage == stage)
        });
        match found {
            Some(t) => {
                let mut t = t.clone();
                t.question_id = question_id.to_ascii_uppercase();
                Ok(t)
            }
            None => Err(TemplateError::NotFound {
                id: id.to_string(),
                question_id: question_id.to_string(),
                stage: Some(stage),
            }),
        }
    }

    /// The entry template (stage 1) for `(id, question_id)`.
    pub fn load_template(&self, id: &str, question_id: &str) -> Result<PromptTemplate, TemplateError> {
        self.stage(id, question_id, 1).map_err(|_| TemplateError::NotFound {
            id: id.to_string(),
            question_id: question_id.to_string(),
            stage: None,
        })
    }

    /// Both stages of a chain. A chain is two-stage exactly when a stage-2
    /// asset exists for the pair.
    pub fn chain(&self, id: &str, question_id: &str) -> Result<ChainTemplates, TemplateError> {
        let stage1 = self.load_template(id, question_id)?;
        let stage2 = self.stage(id, question_id, 2).ok();
        Ok(ChainTemplates { stage1, stage2 })
    }

    /// Distinct template ids, in asset order.
    pub fn ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for t in &self.templates {
            if !ids.contains(&t.id.as_str()) {
                ids.push(&t.id);
            }
        }
        ids
    }
}

impl Default for TemplateStore {
    fn default() -> Self {
        Self::bundled()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::QuestionBank;

    fn clause() -> ClauseItem {
        ClauseItem {
            id: "c1".into(),
            concept: "change-of-control".into(),
            clause_text: "Neither party may undergo a Change of Control without [REDACTED] consent.".into(),
            source: None,
        }
    }

    #[test]
    fn options_render_one_per_line() {
        let opts = vec![
            OptionSpec { letter: 'a', text: "X".into() },
            OptionSpec { letter: 'b', text: "Y".into() },
        ];
        assert_eq!(render_options(&opts), "a) X\nb) Y");
        assert_eq!(render_options(&opts[..1]), "a) X");
        let bank = QuestionBank::default_bank();
        let q4 = render_options(&bank.get("Q4").unwrap().options);
        assert_eq!(q4.lines().count(), 6);
        assert!(q4.starts_with("a) Acts of God or natural disasters."));
    }

    #[test]
    fn p1_renders_abstention_sentence() {
        let store = TemplateStore::bundled();
        let bank = QuestionBank::default_bank();
        let q1 = bank.get("Q1").unwrap();
        let t = store.load_template("P1", "Q1").unwrap();
        assert_eq!(t.question_id, "Q1");
        let out = t.render(&SlotBindings::for_clause(q1, &clause())).unwrap();
        assert!(out.contains("If the clause does not specify, respond with: \"Unable to determine\"."));
        assert!(out.starts_with("Read the following change of control legal clause:"));
        assert!(out.contains("[REDACTED]"));
    }

    #[test]
    fn p4_stage1_ends_with_options() {
        let store = TemplateStore::bundled();
        let q1 = QuestionBank::default_bank().get("Q1").unwrap().clone();
        let out = store
            .load_template("P4", "Q1")
            .unwrap()
            .render(&SlotBindings::for_clause(&q1, &clause()))
            .unwrap();
        let options = render_options(&q1.options);
        let anchor = "Your response will be subsequently mapped to the following options";
        assert!(out.ends_with(&options));
        assert!(out.find(anchor).unwrap() < out.rfind(&options).unwrap());
    }

    #[test]
    fn p3_stage2_places_response_between_delimiters() {
        let store = TemplateStore::bundled();
        let q1 = QuestionBank::default_bank().get("Q1").unwrap().clone();
        let t = store.stage("P3", "Q1", 2).unwrap();
        let out = t.render(&SlotBindings::for_response(&q1, "SUMMARY-X")).unwrap();
        let begin = out.find("#### BEGIN RESPONSE####").unwrap();
        let end = out.find("#### END RESPONSE ####").unwrap();
        assert!(out[begin..end].contains("SUMMARY-X"));
    }

    #[test]
    fn missing_binding_names_the_slot() {
        let store = TemplateStore::bundled();
        let t = store.stage("P3", "Q1", 2).unwrap();
        let err = t.render(&SlotBindings::default()).unwrap_err();
        assert!(matches!(err, TemplateError::MissingBinding(_, Slot::Question)));
    }

    #[test]
    fn lookup_rules() {
        let store = TemplateStore::bundled();
        assert!(store.load_template("P5", "Q4").unwrap().body.contains("shortages of fuel, raw materials, power or energy"));
        assert!(matches!(store.load_template("P5", "Q1"), Err(TemplateError::NotFound { .. })));
        assert!(store
            .load_template("P4-PER-PARTY", "Q1")
            .unwrap()
            .body
            .contains("Provide for each party, its requirements, obligations, and duties"));
        assert!(!store.chain("P1", "Q3").unwrap().is_two_stage());
        assert!(!store.chain("P2", "Q3").unwrap().is_two_stage());
        for id in ["P3", "P4"] {
            for q in ["Q1", "Q2", "Q3", "Q4"] {
                assert!(store.chain(id, q).unwrap().is_two_stage(), "{id} {q}");
            }
        }
        assert!(store.chain("P5", "Q4").unwrap().is_two_stage());
    }

    #[test]
    fn asset_validation() {
        let unknown = PromptTemplate::parse_asset("x", "#! id=X question=Q1 stage=1 version=1\nhello {{NAME}}");
        assert!(matches!(unknown, Err(TemplateError::UnknownSlot { .. })));
        let resp_in_stage1 = PromptTemplate::parse_asset("x", "#! id=X question=Q1 stage=1 version=1\n{{RESPONSE}}");
        assert!(matches!(resp_in_stage1, Err(TemplateError::Malformed { .. })));
        let clause_in_stage2 = PromptTemplate::parse_asset("x", "#! id=X question=Q1 stage=2 version=1\n{{CLAUSE}}");
        assert!(matches!(clause_in_stage2, Err(TemplateError::Malformed { .. })));
        let no_header = PromptTemplate::parse_asset("x", "body only");
        assert!(matches!(no_header, Err(TemplateError::Malformed { .. })));
    }

    #[test]
    fn bindings_are_not_rescanned() {
        let t = PromptTemplate::parse_asset("x", "#! id=X question=Q1 stage=1 version=1\n<{{CLAUSE}}>\n").unwrap();
        let b = SlotBindings {
            clause: Some("{{QUESTION}}".into()),
            ..Default::default()
        };
        assert_eq!(t.render(&b).unwrap(), "<{{QUESTION}}>");
    }
}

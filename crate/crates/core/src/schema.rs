//! Question bank, clause dataset and gold annotations.
//!
//! The question bank is a TOML document (see `assets/questions.toml` for the
//! bundled default). The dataset is JSON-lines with one record per
//! (clause, question) pair:
//!
//! ```text
//! {"clause_id": "coc-01", "question_id": "Q1", "concept": "change-of-control",
//!  "clause_text": "...", "gold": ["a", "b"]}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

const DEFAULT_BANK: &str = include_str!("../assets/questions.toml");

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed question bank: {0}")]
    BankParse(String),
    #[error("invalid question bank: {0}")]
    BankInvalid(String),
    #[error("malformed dataset record at line {line}: {message}")]
    DatasetParse { line: usize, message: String },
    #[error("dataset violates invariants: {0}")]
    DatasetInvalid(ValidationReport),
}

/// An option letter: a single lowercase ASCII letter.
pub fn normalize_letter(raw: &str) -> Option<char> {
    let mut chars = raw.trim().chars();
    let c = chars.next()?;
    if chars.next().is_some() || !c.is_ascii_alphabetic() {
        return None;
    }
    Some(c.to_ascii_lowercase())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub letter: char,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub id: String,
    pub concept: String,
    #[serde(rename = "text")]
    pub question_text: String,
    #[serde(default)]
    pub exclusive_options: BTreeSet<char>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstention_option: Option<char>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catch_all_option: Option<char>,
    pub options: Vec<OptionSpec>,
}

impl QuestionSpec {
    pub fn letters(&self) -> impl Iterator<Item = char> + '_ {
        self.options.iter().map(|o| o.letter)
    }

    pub fn has_letter(&self, letter: char) -> bool {
        self.options.iter().any(|o| o.letter == letter)
    }

    /// Human-readable clause name used in prompts, e.g. "change of control".
    pub fn clause_name(&self) -> String {
        self.concept.replace(['-', '_'], " ")
    }

    fn normalize(&mut self) {
        for o in &mut self.options {
            o.letter = o.letter.to_ascii_lowercase();
        }
        self.exclusive_options = self
            .exclusive_options
            .iter()
            .map(|c| c.to_ascii_lowercase())
            .collect();
        self.abstention_option = self.abstention_option.map(|c| c.to_ascii_lowercase());
        self.catch_all_option = self.catch_all_option.map(|c| c.to_ascii_lowercase());
    }

    fn check(&self) -> Result<(), String> {
        let id = &self.id;
        if id.trim().is_empty() {
            return Err("question with empty id".into());
        }
        if self.options.is_empty() {
            return Err(format!("{id}: no options"));
        }
        if self.options.len() > 26 {
            return Err(format!("{id}: more than 26 options"));
        }
        for (i, o) in self.options.iter().enumerate() {
            let expected = (b'a' + i as u8) as char;
            if o.letter != expected {
                return Err(format!(
                    "{id}: option {} has letter '{}', expected '{expected}' (letters must be unique and contiguous from 'a')",
                    i + 1,
                    o.letter
                ));
            }
            if o.text.trim().is_empty() {
                return Err(format!("{id}: option '{}' has empty text", o.letter));
            }
        }
        for &c in &self.exclusive_options {
            if !self.has_letter(c) {
                return Err(format!("{id}: exclusive option '{c}' is not an option letter"));
            }
        }
        if let Some(c) = self.abstention_option {
            if !self.has_letter(c) {
                return Err(format!("{id}: abstention option '{c}' is not an option letter"));
            }
        }
        if let Some(c) = self.catch_all_option {
            if !self.has_letter(c) {
                return Err(format!("{id}: catch-all option '{c}' is not an option letter"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionBank {
    #[serde(rename = "question")]
    questions: Vec<QuestionSpec>,
}

impl QuestionBank {
    pub fn new(mut questions: Vec<QuestionSpec>) -> Result<Self, SchemaError> {
        let mut seen = HashSet::new();
        for q in &mut questions {
            q.normalize();
            q.check().map_err(SchemaError::BankInvalid)?;
            if !seen.insert(q.id.clone()) {
                return Err(SchemaError::BankInvalid(format!("duplicate question id {}", q.id)));
            }
        }
        Ok(Self { questions })
    }

    /// The bundled bank (Q1 to Q4).
    pub fn default_bank() -> Self {
        Self::from_toml_str(DEFAULT_BANK).expect("bundled question bank is valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SchemaError> {
        let raw: QuestionBank = toml::from_str(s).map_err(|e| SchemaError::BankParse(e.to_string()))?;
        Self::new(raw.questions)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("question bank serializes")
    }

    pub fn questions(&self) -> &[QuestionSpec] {
        &self.questions
    }

    pub fn get(&self, id: &str) -> Option<&QuestionSpec> {
        self.questions.iter().find(|q| q.id.eq_ignore_ascii_case(id))
    }

    pub fn concepts(&self) -> BTreeSet<&str> {
        self.questions.iter().map(|q| q.concept.as_str()).collect()
    }
}

pub fn load_question_bank(path: impl AsRef<Path>) -> Result<QuestionBank, SchemaError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    QuestionBank::from_toml_str(&text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClauseItem {
    pub id: String,
    pub concept: String,
    pub clause_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

/// Gold answer for one (clause, question) pair. Letters are kept in input
/// order so duplicates can be reported; use [`GoldAnnotation::gold_set`] for
/// scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub clause_id: String,
    pub question_id: String,
    pub gold: Vec<char>,
}

impl GoldAnnotation {
    pub fn gold_set(&self) -> BTreeSet<char> {
        self.gold.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub items: Vec<ClauseItem>,
    pub annotations: Vec<GoldAnnotation>,
}

/// One line of the dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub clause_id: String,
    pub question_id: String,
    pub concept: String,
    pub clause_text: String,
    pub gold: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Dataset {
    /// Parses the JSON-lines format. Structural checks only: every line is a
    /// record, gold entries are single letters, and a clause id always maps to
    /// the same concept and text. Bank-dependent checks live in [`validate`].
    pub fn from_jsonl(text: &str) -> Result<Self, SchemaError> {
        let mut items: Vec<ClauseItem> = Vec::new();
        let mut by_id: HashMap<String, usize> = HashMap::new();
        let mut annotations = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DatasetRecord =
                serde_json::from_str(line).map_err(|e| SchemaError::DatasetParse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let mut gold = Vec::with_capacity(rec.gold.len());
            for g in &rec.gold {
                let letter = normalize_letter(g).ok_or_else(|| SchemaError::DatasetParse {
                    line: line_no,
                    message: format!("record {}/{}: gold entry {g:?} is not a single letter", rec.clause_id, rec.question_id),
                })?;
                gold.push(letter);
            }
            match by_id.get(&rec.clause_id) {
                Some(&i) => {
                    let existing = &items[i];
                    if existing.clause_text != rec.clause_text || existing.concept != rec.concept {
                        return Err(SchemaError::DatasetParse {
                            line: line_no,
                            message: format!(
                                "clause {} appears with different text or concept",
                                rec.clause_id
                            ),
                        });
                    }
                }
                None => {
                    by_id.insert(rec.clause_id.clone(), items.len());
                    items.push(ClauseItem {
                        id: rec.clause_id.clone(),
                        concept: rec.concept.clone(),
                        clause_text: rec.clause_text.clone(),
                        source: rec.source.clone(),
                    });
                }
            }
            annotations.push(GoldAnnotation {
                clause_id: rec.clause_id,
                question_id: rec.question_id,
                gold,
            });
        }
        Ok(Self { items, annotations })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for a in &self.annotations {
            let Some(item) = self.item(&a.clause_id) else { continue };
            let rec = DatasetRecord {
                clause_id: a.clause_id.clone(),
                question_id: a.question_id.clone(),
                concept: item.concept.clone(),
                clause_text: item.clause_text.clone(),
                gold: a.gold.iter().map(|c| c.to_string()).collect(),
                source: item.source.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn item(&self, clause_id: &str) -> Option<&ClauseItem> {
        self.items.iter().find(|i| i.id == clause_id)
    }

    pub fn annotation(&self, clause_id: &str, question_id: &str) -> Option<&GoldAnnotation> {
        self.annotations
            .iter()
            .find(|a| a.clause_id == clause_id && a.question_id.eq_ignore_ascii_case(question_id))
    }

    /// Clauses annotated for `question_id`, in annotation order.
    pub fn items_for_question(&self, question_id: &str) -> Vec<&ClauseItem> {
        self.annotations
            .iter()
            .filter(|a| a.question_id.eq_ignore_ascii_case(question_id))
            .filter_map(|a| self.item(&a.clause_id))
            .collect()
    }

    /// Gold sets for one question keyed by clause id.
    pub fn gold_for_question(&self, question_id: &str) -> BTreeMap<String, BTreeSet<char>> {
        self.annotations
            .iter()
            .filter(|a| a.question_id.eq_ignore_ascii_case(question_id))
            .map(|a| (a.clause_id.clone(), a.gold_set()))
            .collect()
    }
}

/// Parses and validates a dataset file against `bank`; any violation is an
/// error naming the offending records.
pub fn load_dataset(path: impl AsRef<Path>, bank: &QuestionBank) -> Result<Dataset, SchemaError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let dataset = Dataset::from_jsonl(&text)?;
    let report = validate(&dataset, bank);
    if report.is_empty() {
        Ok(dataset)
    } else {
        Err(SchemaError::DatasetInvalid(report))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    EmptyClauseText,
    UnknownConcept,
    UnknownClause,
    UnknownQuestion,
    DuplicatePair,
    EmptyGold,
    DuplicateGoldLetter,
    OutOfDomainLetter,
    ExclusiveNotSole,
    ConceptMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub clause_id: String,
    pub question_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violation(s)", self.violations.len())?;
        for v in &self.violations {
            match &v.question_id {
                Some(q) => write!(f, "; {}/{}: {}", v.clause_id, q, v.message)?,
                None => write!(f, "; {}: {}", v.clause_id, v.message)?,
            }
        }
        Ok(())
    }
}

/// Checks every clause and annotation against `bank`. Violations are data;
/// the dataset is not modified.
pub fn validate(dataset: &Dataset, bank: &QuestionBank) -> ValidationReport {
    let mut violations = Vec::new();
    let concepts = bank.concepts();
    let mut push = |kind, clause_id: &str, question_id: Option<&str>, message: String| {
        violations.push(Violation {
            kind,
            clause_id: clause_id.to_string(),
            question_id: question_id.map(str::to_string),
            message,
        })
    };

    for item in &dataset.items {
        if item.clause_text.trim().is_empty() {
            push(ViolationKind::EmptyClauseText, &item.id, None, "clause text is empty".into());
        }
        if !concepts.contains(item.concept.as_str()) {
            push(
                ViolationKind::UnknownConcept,
                &item.id,
                None,
                format!("concept {:?} matches no question", item.concept),
            );
        }
    }

    let mut pairs = HashSet::new();
    for a in &dataset.annotations {
        let qid = Some(a.question_id.as_str());
        let item = dataset.item(&a.clause_id);
        if item.is_none() {
            push(ViolationKind::UnknownClause, &a.clause_id, qid, "annotation references an unknown clause".into());
        }
        if !pairs.insert((a.clause_id.clone(), a.question_id.to_ascii_uppercase())) {
            push(ViolationKind::DuplicatePair, &a.clause_id, qid, "duplicate (clause, question) pair".into());
        }
        if a.gold.is_empty() {
            push(ViolationKind::EmptyGold, &a.clause_id, qid, "gold set is empty".into());
        }
        let mut seen = BTreeSet::new();
        for &c in &a.gold {
            if !seen.insert(c) {
                push(ViolationKind::DuplicateGoldLetter, &a.clause_id, qid, format!("gold letter '{c}' repeated"));
            }
        }
        let Some(question) = bank.get(&a.question_id) else {
            push(
                ViolationKind::UnknownQuestion,
                &a.clause_id,
                qid,
                format!("unknown question id {:?}", a.question_id),
            );
            continue;
        };
        for &c in &seen {
            if !question.has_letter(c) {
                push(
                    ViolationKind::OutOfDomainLetter,
                    &a.clause_id,
                    qid,
                    format!("gold letter '{c}' is not an option of {}", question.id),
                );
            }
        }
        if seen.len() > 1 && seen.iter().any(|c| question.exclusive_options.contains(c)) {
            push(
                ViolationKind::ExclusiveNotSole,
                &a.clause_id,
                qid,
                "an exclusive option must be the only gold letter".into(),
            );
        }
        if let Some(item) = item {
            if item.concept != question.concept {
                push(
                    ViolationKind::ConceptMismatch,
                    &a.clause_id,
                    qid,
                    format!("clause concept {:?} differs from question concept {:?}", item.concept, question.concept),
                );
            }
        }
    }
    ValidationReport { violations }
}

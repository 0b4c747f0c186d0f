//! Turns raw model text into a [`PredictionSet`].
//!
//! Pipeline: [`extract_payload`] finds the first JSON array (bare, fenced or
//! embedded in prose); [`parse_buckets`] reads its `"bucket"` fields; if no
//! array is present, [`classify_abstention`] checks for the mandated
//! "Unable to determine" reply; [`apply_constraints`] then applies the
//! exclusive-option policy. [`parse_response`] runs all of it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::schema::{normalize_letter, QuestionSpec};

pub const ABSTENTION_PHRASE: &str = "unable to determine";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub selected: BTreeSet<char>,
    pub abstained: bool,
    pub unparseable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unparseable_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint_violation: Option<String>,
    /// More than one JSON array was present; the first was used.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub multiple_payloads: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanations: Option<BTreeMap<char, String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Parsed,
    Abstained,
    Unparseable,
}

impl PredictionSet {
    pub fn unparseable(reason: impl Into<String>) -> Self {
        Self {
            unparseable: true,
            unparseable_reason: Some(reason.into()),
            ..Default::default()
        }
    }

    pub fn outcome(&self) -> Outcome {
        if self.unparseable {
            Outcome::Unparseable
        } else if self.abstained {
            Outcome::Abstained
        } else {
            Outcome::Parsed
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintMode {
    /// Leave the selection as the model produced it; record violations.
    #[default]
    Observe,
    /// Reduce a violating selection to the exclusive option alone.
    Enforce,
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintMode::Observe => "observe",
            ConstraintMode::Enforce => "enforce",
        })
    }
}

impl FromStr for ConstraintMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "observe" => Ok(Self::Observe),
            "enforce" => Ok(Self::Enforce),
            other => Err(format!("unknown constraint mode {other:?} (expected observe or enforce)")),
        }
    }
}

/// A JSON array located in raw text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extracted<'a> {
    pub payload: &'a str,
    pub multiple: bool,
}

/// Byte index of the `]` closing the array opened at `start`, honouring JSON
/// string literals.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'[' => depth += 1,
            b']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// An array whose elements are all objects; bracketed numbers or words in
/// prose (`[12.3]`, `["Seller"]`) are not answers.
fn is_object_array(s: &str) -> bool {
    match serde_json::from_str::<Value>(s) {
        Ok(Value::Array(elements)) => elements.iter().all(Value::is_object),
        _ => false,
    }
}

/// Finds the first JSON array of objects in `raw`.
///
/// Valid arrays win over malformed ones; when no valid array exists, the
/// first bracketed span that opens like an object array (`[{`) is returned so
/// the caller can report the syntax error. Returns `None` when neither exists.
pub fn extract_payload(raw: &str) -> Option<Extracted<'_>> {
    let mut valid: Vec<&str> = Vec::new();
    let mut malformed: Option<&str> = None;
    let mut pos = 0;
    while let Some(off) = raw[pos..].find('[') {
        let start = pos + off;
        match balanced_end(raw, start) {
            Some(end) => {
                let candidate = &raw[start..=end];
                if is_object_array(candidate) {
                    valid.push(candidate);
                    pos = end + 1;
                    continue;
                }
                if malformed.is_none() && candidate[1..].trim_start().starts_with('{') {
                    malformed = Some(candidate);
                }
            }
            None => {
                let tail = &raw[start..];
                if malformed.is_none() && tail[1..].trim_start().starts_with('{') && valid.is_empty() {
                    malformed = Some(tail);
                }
            }
        }
        pos = start + 1;
    }
    match valid.first() {
        Some(first) => Some(Extracted {
            payload: first,
            multiple: valid.len() > 1,
        }),
        None => malformed.map(|payload| Extracted {
            payload,
            multiple: false,
        }),
    }
}

/// Reads the `"bucket"` letters of a JSON array payload.
pub fn parse_buckets(payload: &str, question: &QuestionSpec) -> PredictionSet {
    let value: Value = match serde_json::from_str(payload) {
        Ok(v) => v,
        Err(e) => return PredictionSet::unparseable(format!("invalid JSON: {e}")),
    };
    let Value::Array(elements) = value else {
        return PredictionSet::unparseable("payload is not a JSON array");
    };
    let mut selected = BTreeSet::new();
    let mut explanations = BTreeMap::new();
    for element in &elements {
        let Some(obj) = element.as_object() else {
            return PredictionSet::unparseable(format!("array element {element} is not an object"));
        };
        let Some(bucket) = obj.get("bucket") else {
            return PredictionSet::unparseable(format!("array element {element} has no \"bucket\" field"));
        };
        let Some(raw_letter) = bucket.as_str() else {
            return PredictionSet::unparseable(format!("bucket value {bucket} is not a string"));
        };
        let Some(letter) = normalize_letter(raw_letter) else {
            return PredictionSet::unparseable(format!("bucket value {raw_letter:?} is not a single letter"));
        };
        if !question.has_letter(letter) {
            return PredictionSet::unparseable(format!("out-of-domain letter '{letter}' for {}", question.id));
        }
        selected.insert(letter);
        if let Some(text) = obj.get("explanation").and_then(Value::as_str) {
            explanations.entry(letter).or_insert_with(|| text.to_string());
        }
    }
    PredictionSet {
        selected,
        explanations: (!explanations.is_empty()).then_some(explanations),
        ..Default::default()
    }
}

fn is_wrapping(c: char) -> bool {
    c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '“' | '”' | '‘' | '’' | '.' | '!' | ';' | ':' | ',')
}

/// Recognises the exact abstention phrase, ignoring case, surrounding quotes,
/// terminal punctuation and whitespace.
pub fn classify_abstention(raw: &str, question: &QuestionSpec) -> Option<PredictionSet> {
    let core = raw.trim_matches(is_wrapping);
    if !core.eq_ignore_ascii_case(ABSTENTION_PHRASE) {
        return None;
    }
    Some(PredictionSet {
        selected: question.abstention_option.into_iter().collect(),
        abstained: true,
        ..Default::default()
    })
}

/// Checks the exclusive-option rule. A recorded violation is never cleared,
/// which keeps the operation idempotent in both modes.
pub fn apply_constraints(prediction: &PredictionSet, question: &QuestionSpec, mode: ConstraintMode) -> PredictionSet {
    let mut out = prediction.clone();
    if out.unparseable || out.selected.len() < 2 {
        return out;
    }
    let Some(&exclusive) = out.selected.iter().find(|c| question.exclusive_options.contains(c)) else {
        return out;
    };
    let others: String = out.selected.iter().filter(|&&c| c != exclusive).collect();
    out.constraint_violation = Some(format!(
        "exclusive option '{exclusive}' selected together with '{others}'"
    ));
    if mode == ConstraintMode::Enforce {
        out.selected = BTreeSet::from([exclusive]);
        if let Some(ex) = out.explanations.as_mut() {
            ex.retain(|k, _| *k == exclusive);
        }
    }
    out
}

/// Full pipeline from raw model text to a policy-applied prediction.
pub fn parse_response(raw: &str, question: &QuestionSpec, mode: ConstraintMode) -> PredictionSet {
    if let Some(found) = extract_payload(raw) {
        let mut parsed = parse_buckets(found.payload, question);
        parsed.multiple_payloads = found.multiple;
        return apply_constraints(&parsed, question, mode);
    }
    classify_abstention(raw, question).unwrap_or_else(|| PredictionSet::unparseable("no JSON array found"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::QuestionBank;

    fn q(id: &str) -> QuestionSpec {
        QuestionBank::default_bank().get(id).unwrap().clone()
    }

    fn set(s: &str) -> BTreeSet<char> {
        s.chars().collect()
    }

    #[test]
    fn extract_fenced_prose_and_absent() {
        assert_eq!(
            extract_payload("```json\n[{\"bucket\": \"a\"}]\n```").unwrap().payload,
            "[{\"bucket\": \"a\"}]"
        );
        let prose = "Here is my answer: [{\"bucket\":\"b\"},{\"bucket\":\"e\"}] Hope this helps.";
        assert_eq!(extract_payload(prose).unwrap().payload, "[{\"bucket\":\"b\"},{\"bucket\":\"e\"}]");
        assert_eq!(extract_payload("Unable to determine"), None);
    }

    #[test]
    fn extract_skips_prose_brackets_and_flags_multiples() {
        let raw = "See [Clause] above. [{\"bucket\":\"a\"}] and later [{\"bucket\":\"b\"}]";
        let found = extract_payload(raw).unwrap();
        assert_eq!(found.payload, "[{\"bucket\":\"a\"}]");
        assert!(found.multiple);
        let tricky = "[{\"bucket\":\"a\",\"explanation\":\"see ] here\"}]";
        assert_eq!(extract_payload(tricky).unwrap().payload, tricky);
    }

    #[test]
    fn extract_returns_malformed_array_for_diagnosis() {
        let raw = "[{\"bucket\": \"a\",}]";
        assert_eq!(extract_payload(raw).unwrap().payload, raw);
        let p = parse_response(raw, &q("Q1"), ConstraintMode::Observe);
        assert!(p.unparseable);
    }

    #[test]
    fn buckets_are_case_folded_and_deduped() {
        let p = parse_buckets(r#"[{"bucket":"A"},{"bucket":"a"},{"bucket":"c"}]"#, &q("Q1"));
        assert_eq!(p.selected, set("ac"));
        assert_eq!(p.outcome(), Outcome::Parsed);
    }

    #[test]
    fn explanation_field_is_captured() {
        let p = parse_buckets(r#"[{"bucket":"a","explanation":"notice required"}]"#, &q("Q1"));
        assert_eq!(p.selected, set("a"));
        assert_eq!(p.explanations.unwrap()[&'a'], "notice required");
    }

    #[test]
    fn out_of_domain_and_long_buckets_are_unparseable() {
        let p = parse_buckets(r#"[{"bucket":"q"}]"#, &q("Q4"));
        assert!(p.unparseable && p.selected.is_empty());
        assert!(p.unparseable_reason.unwrap().contains("out-of-domain"));
        assert!(parse_buckets(r#"[{"bucket":"option a"}]"#, &q("Q4")).unparseable);
        assert!(parse_buckets(r#"["a"]"#, &q("Q4")).unparseable);
    }

    #[test]
    fn abstention_phrase_matching() {
        let p = classify_abstention("Unable to determine", &q("Q1")).unwrap();
        assert_eq!(p.selected, set("g"));
        assert!(p.abstained);
        let p = classify_abstention("\"Unable to determine\".", &q("Q2")).unwrap();
        assert!(p.selected.is_empty() && p.abstained);
        assert_eq!(classify_abstention("I cannot answer this", &q("Q2")), None);
        assert_eq!(classify_abstention("Unable to determine the parties", &q("Q2")), None);
    }

    #[test]
    fn constraint_modes() {
        let q1 = q("Q1");
        let ga = PredictionSet { selected: set("ag"), ..Default::default() };
        let enforced = apply_constraints(&ga, &q1, ConstraintMode::Enforce);
        assert_eq!(enforced.selected, set("g"));
        assert!(enforced.constraint_violation.is_some());
        let observed = apply_constraints(&ga, &q1, ConstraintMode::Observe);
        assert_eq!(observed.selected, set("ag"));
        assert!(observed.constraint_violation.is_some());
        let ab = PredictionSet { selected: set("ab"), ..Default::default() };
        assert_eq!(apply_constraints(&ab, &q1, ConstraintMode::Enforce), ab);
    }

    #[test]
    fn prediction_serializes_letters_as_strings() {
        let p = parse_buckets(r#"[{"bucket":"c","explanation":"x"},{"bucket":"a"}]"#, &q("Q1"));
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"selected":["a","c"],"abstained":false,"unparseable":false,"explanations":{"c":"x"}}"#);
        assert_eq!(serde_json::from_str::<PredictionSet>(&json).unwrap(), p);
    }
}

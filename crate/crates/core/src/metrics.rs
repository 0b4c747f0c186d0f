//! Scoring against gold annotations.
//!
//! All metrics are computed as exact fractions ([`Fraction`]) and only
//! converted to floating point for display. Precision or recall with a zero
//! denominator is undefined (`None`) and excluded from macro averages; the
//! exclusion count is always reported.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::chain::RunArtifact;
use crate::parser::{parse_response, ConstraintMode, Outcome};
use crate::schema::{Dataset, QuestionBank, QuestionSpec};

pub type Fraction = Ratio<u64>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("nothing to score")]
    Empty,
    #[error("no gold annotation for clause {0}")]
    MissingGold(String),
    #[error("option '{0}' is not an option of {1}")]
    OutOfDomain(char, String),
    #[error("every value is undefined")]
    AllUndefined,
    #[error("trace and dataset do not match: {0}")]
    Mismatch(String),
    #[error("duplicate grid cell {0}")]
    DuplicateCell(String),
    #[error("malformed grid CSV: {0}")]
    Csv(String),
}

pub fn to_f64(f: Fraction) -> f64 {
    *f.numer() as f64 / *f.denom() as f64
}

fn fraction(num: u64, den: u64) -> Option<Fraction> {
    (den > 0).then(|| Ratio::new(num, den))
}

/// A predicted set paired with its gold set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredItem {
    pub clause_id: String,
    pub predicted: BTreeSet<char>,
    pub gold: BTreeSet<char>,
}

/// Fraction of items whose predicted set equals the gold set exactly.
pub fn exact_match_accuracy(items: &[ScoredItem]) -> Result<Fraction, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = items.iter().filter(|i| i.predicted == i.gold).count() as u64;
    Ok(Ratio::new(hits, items.len() as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionConfusion {
    pub option: char,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl OptionConfusion {
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Treats `option` as a binary label across all items.
pub fn option_confusion(items: &[ScoredItem], question: &QuestionSpec, option: char) -> Result<OptionConfusion, MetricsError> {
    if !question.has_letter(option) {
        return Err(MetricsError::OutOfDomain(option, question.id.clone()));
    }
    let mut c = OptionConfusion {
        option,
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for item in items {
        match (item.predicted.contains(&option), item.gold.contains(&option)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `(precision, recall)`; each is `None` when its denominator is zero.
pub fn precision_recall(c: &OptionConfusion) -> (Option<Fraction>, Option<Fraction>) {
    (fraction(c.tp, c.tp + c.fp), fraction(c.tp, c.tp + c.fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacroAverage {
    pub value: Fraction,
    pub included: usize,
    pub excluded: usize,
}

/// Mean over the defined values only.
pub fn macro_average(values: &[Option<Fraction>]) -> Result<MacroAverage, MetricsError> {
    let defined: Vec<Fraction> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(MetricsError::AllUndefined);
    }
    let sum = defined.iter().fold(Ratio::from_integer(0), |acc, v| acc + v);
    Ok(MacroAverage {
        value: sum / Ratio::from_integer(defined.len() as u64),
        included: defined.len(),
        excluded: values.len() - defined.len(),
    })
}

/// Pooled precision and recall over all option decisions.
pub fn micro_precision_recall(confusions: &[OptionConfusion]) -> (Option<Fraction>, Option<Fraction>) {
    let tp: u64 = confusions.iter().map(|c| c.tp).sum();
    let fp: u64 = confusions.iter().map(|c| c.fp).sum();
    let fn_: u64 = confusions.iter().map(|c| c.fn_).sum();
    (fraction(tp, tp + fp), fraction(tp, tp + fn_))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionRow {
    pub option: char,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub support: u64,
    pub confusion: OptionConfusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Average {
    pub value: Option<f64>,
    /// Exact value as `numerator/denominator`.
    pub exact: Option<String>,
    pub excluded: usize,
}

impl Average {
    fn from_macro(r: Result<MacroAverage, MetricsError>, n: usize) -> Self {
        match r {
            Ok(m) => Self {
                value: Some(to_f64(m.value)),
                exact: Some(m.value.to_string()),
                excluded: m.excluded,
            },
            Err(_) => Self {
                value: None,
                exact: None,
                excluded: n,
            },
        }
    }

    fn from_fraction(f: Option<Fraction>) -> Self {
        Self {
            value: f.map(to_f64),
            exact: f.map(|f| f.to_string()),
            excluded: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub items: usize,
    pub scored: usize,
    pub abstained: usize,
    pub unparseable: usize,
    pub constraint_violations: usize,
    pub failures: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub prompt: String,
    pub model: String,
    pub question_id: String,
    pub constraint_mode: ConstraintMode,
    pub exact_match: f64,
    pub exact_match_exact: String,
    pub per_option: Vec<OptionRow>,
    pub macro_precision: Average,
    pub macro_recall: Average,
    pub micro_precision: Average,
    pub micro_recall: Average,
    pub counts: EvalCounts,
}

/// Re-parses every run's final text under `mode` and scores it against the
/// dataset's gold sets. Unparseable runs score as empty predictions; failed
/// items are counted but not scored.
pub fn build_report(artifact: &RunArtifact, dataset: &Dataset, bank: &QuestionBank, mode: ConstraintMode) -> Result<EvalReport, MetricsError> {
    let config = artifact.config();
    let question = bank
        .get(&config.question_id)
        .ok_or_else(|| MetricsError::Mismatch(format!("unknown question {}", config.question_id)))?;
    if artifact.runs.is_empty() {
        return Err(MetricsError::Mismatch("trace contains no runs".into()));
    }
    let gold = dataset.gold_for_question(&question.id);
    let mut counts = EvalCounts {
        failures: artifact.failures.len(),
        skipped: artifact.skipped.len(),
        ..Default::default()
    };
    let mut items = Vec::with_capacity(artifact.runs.len());
    for run in &artifact.runs {
        if !run.question_id.eq_ignore_ascii_case(&question.id) {
            return Err(MetricsError::Mismatch(format!(
                "run for clause {} answers {} but the trace is for {}",
                run.clause_id, run.question_id, question.id
            )));
        }
        let gold_set = gold
            .get(&run.clause_id)
            .ok_or_else(|| MetricsError::MissingGold(run.clause_id.clone()))?;
        let prediction = parse_response(&run.final_raw, question, mode);
        match prediction.outcome() {
            Outcome::Parsed => counts.scored += 1,
            Outcome::Abstained => counts.abstained += 1,
            Outcome::Unparseable => counts.unparseable += 1,
        }
        if prediction.constraint_violation.is_some() {
            counts.constraint_violations += 1;
        }
        items.push(ScoredItem {
            clause_id: run.clause_id.clone(),
            predicted: prediction.selected,
            gold: gold_set.clone(),
        });
    }
    counts.items = items.len();
    score(&items, question, &config.template_id, config.model_label(), mode, counts)
}

/// Scores already-paired items.
pub fn score(
    items: &[ScoredItem],
    question: &QuestionSpec,
    prompt: &str,
    model: &str,
    mode: ConstraintMode,
    counts: EvalCounts,
) -> Result<EvalReport, MetricsError> {
    let exact = exact_match_accuracy(items)?;
    let mut confusions = Vec::new();
    let mut per_option = Vec::new();
    let (mut precisions, mut recalls) = (Vec::new(), Vec::new());
    for letter in question.letters() {
        let c = option_confusion(items, question, letter)?;
        let (p, r) = precision_recall(&c);
        precisions.push(p);
        recalls.push(r);
        per_option.push(OptionRow {
            option: letter,
            precision: p.map(to_f64),
            recall: r.map(to_f64),
            support: c.support(),
            confusion: c,
        });
        confusions.push(c);
    }
    let (micro_p, micro_r) = micro_precision_recall(&confusions);
    Ok(EvalReport {
        prompt: prompt.to_string(),
        model: model.to_string(),
        question_id: question.id.clone(),
        constraint_mode: mode,
        exact_match: to_f64(exact),
        exact_match_exact: exact.to_string(),
        per_option,
        macro_precision: Average::from_macro(macro_average(&precisions), precisions.len()),
        macro_recall: Average::from_macro(macro_average(&recalls), recalls.len()),
        micro_precision: Average::from_fraction(micro_p),
        micro_recall: Average::from_fraction(micro_r),
        counts,
    })
}

fn fmt2(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

/// Plain-text rendering of a single report.
pub fn render_report_text(r: &EvalReport, show_micro: bool) -> String {
    let mut out = String::new();
    let c = &r.counts;
    let _ = writeln!(out, "prompt {}  model {}  question {}  constraint-mode {}", r.prompt, r.model, r.question_id, r.constraint_mode);
    let _ = writeln!(
        out,
        "items {}  scored {}  abstained {}  unparseable {}  constraint-violations {}  failures {}  skipped {}",
        c.items, c.scored, c.abstained, c.unparseable, c.constraint_violations, c.failures, c.skipped
    );
    let _ = writeln!(out, "exact match      {:.2} ({})", r.exact_match, r.exact_match_exact);
    let _ = writeln!(out, "macro precision  {} (undefined options excluded: {})", fmt2(r.macro_precision.value), r.macro_precision.excluded);
    let _ = writeln!(out, "macro recall     {} (undefined options excluded: {})", fmt2(r.macro_recall.value), r.macro_recall.excluded);
    if show_micro {
        let _ = writeln!(out, "micro precision  {}", fmt2(r.micro_precision.value));
        let _ = writeln!(out, "micro recall     {}", fmt2(r.micro_recall.value));
    }
    let rows: Vec<Vec<String>> = r
        .per_option
        .iter()
        .map(|o| {
            vec![
                o.option.to_string(),
                fmt2(o.precision),
                fmt2(o.recall),
                o.support.to_string(),
                o.confusion.tp.to_string(),
                o.confusion.fp.to_string(),
                o.confusion.fn_.to_string(),
                o.confusion.tn.to_string(),
            ]
        })
        .collect();
    let table = Table {
        header: vec![["option", "P", "R", "support", "tp", "fp", "fn", "tn"].map(String::from).to_vec()],
        rows,
    };
    out.push('\n');
    out.push_str(&table.render());
    out
}

// ---------------------------------------------------------------------------
// Result grids

pub const METRIC_EXACT_MATCH: &str = "exact_match";
pub const METRIC_PRECISION: &str = "precision";
pub const METRIC_RECALL: &str = "recall";
pub const METRIC_MICRO_PRECISION: &str = "micro_precision";
pub const METRIC_MICRO_RECALL: &str = "micro_recall";

/// One value of a result grid. `option` is empty for whole-question metrics
/// (exact match and the macro averages) and a letter for per-option ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub prompt: String,
    pub model: String,
    pub question: String,
    pub metric: String,
    pub option: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultGrid {
    cells: Vec<GridCell>,
}

fn push_unique(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_string());
    }
}

impl ResultGrid {
    pub fn cells(&self) -> &[GridCell] {
        &self.cells
    }

    /// Adds a cell; a second value for the same coordinates is an error.
    pub fn insert(&mut self, cell: GridCell) -> Result<(), MetricsError> {
        if self.get(&cell.prompt, &cell.model, &cell.question, &cell.metric, &cell.option).is_some() {
            return Err(MetricsError::DuplicateCell(format!(
                "({}, {}, {}, {}{})",
                cell.prompt,
                cell.model,
                cell.question,
                cell.metric,
                if cell.option.is_empty() { String::new() } else { format!(", {}", cell.option) }
            )));
        }
        self.cells.push(cell);
        Ok(())
    }

    pub fn get(&self, prompt: &str, model: &str, question: &str, metric: &str, option: &str) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.prompt == prompt && c.model == model && c.question == question && c.metric == metric && c.option == option)
            .map(|c| c.value)
    }

    /// Builds a grid from reports; two reports for the same
    /// (prompt, model, question) collide.
    pub fn from_reports(reports: &[EvalReport], include_micro: bool) -> Result<Self, MetricsError> {
        let mut grid = Self::default();
        let mut seen = BTreeSet::new();
        for r in reports {
            if !seen.insert((r.prompt.clone(), r.model.clone(), r.question_id.clone())) {
                return Err(MetricsError::DuplicateCell(format!("({}, {}, {})", r.prompt, r.model, r.question_id)));
            }
            grid.add_report(r, include_micro)?;
        }
        Ok(grid)
    }

    pub fn add_report(&mut self, r: &EvalReport, include_micro: bool) -> Result<(), MetricsError> {
        let mut cell = |metric: &str, option: String, value: Option<f64>| -> Result<(), MetricsError> {
            match value {
                Some(value) => self.insert(GridCell {
                    prompt: r.prompt.clone(),
                    model: r.model.clone(),
                    question: r.question_id.clone(),
                    metric: metric.to_string(),
                    option,
                    value,
                }),
                None => Ok(()),
            }
        };
        cell(METRIC_EXACT_MATCH, String::new(), Some(r.exact_match))?;
        cell(METRIC_PRECISION, String::new(), r.macro_precision.value)?;
        cell(METRIC_RECALL, String::new(), r.macro_recall.value)?;
        if include_micro {
            cell(METRIC_MICRO_PRECISION, String::new(), r.micro_precision.value)?;
            cell(METRIC_MICRO_RECALL, String::new(), r.micro_recall.value)?;
        }
        for o in &r.per_option {
            cell(METRIC_PRECISION, o.option.to_string(), o.precision)?;
            cell(METRIC_RECALL, o.option.to_string(), o.recall)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: ResultGrid) -> Result<(), MetricsError> {
        for c in other.cells {
            self.insert(c)?;
        }
        Ok(())
    }

    /// CSV with header `prompt,model,question,metric,option,value`.
    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut grid = Self::default();
        for row in reader.deserialize::<GridCell>() {
            let mut cell = row.map_err(|e| MetricsError::Csv(e.to_string()))?;
            cell.option = cell.option.to_ascii_lowercase();
            grid.insert(cell)?;
        }
        Ok(grid)
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for c in &self.cells {
            writer.serialize(c).expect("grid cell serializes");
        }
        String::from_utf8(writer.into_inner().expect("in-memory writer")).expect("csv is utf-8")
    }

    fn axes(&self) -> (Vec<String>, Vec<String>, Vec<String>) {
        let (mut prompts, mut models, mut questions) = (Vec::new(), Vec::new(), Vec::new());
        for c in &self.cells {
            push_unique(&mut prompts, &c.prompt);
            push_unique(&mut models, &c.model);
            push_unique(&mut questions, &c.question);
        }
        (prompts, models, questions)
    }

    /// Whole-question grid: one block of rows per prompt (exact match,
    /// precision, recall), one column group per model with one column per
    /// question. Axes keep first-appearance order; missing cells are blank.
    pub fn summary_table(&self) -> Table {
        let (prompts, models, questions) = self.axes();
        let mut top = vec!["Prompt".to_string(), "Metric".to_string()];
        let mut sub = vec![String::new(), String::new()];
        for m in &models {
            for (i, q) in questions.iter().enumerate() {
                top.push(if i == 0 { m.clone() } else { String::new() });
                sub.push(q.clone());
            }
        }
        let mut metrics = vec![(METRIC_EXACT_MATCH, "Exact Match"), (METRIC_PRECISION, "Precision"), (METRIC_RECALL, "Recall")];
        if self.cells.iter().any(|c| c.metric == METRIC_MICRO_PRECISION) {
            metrics.push((METRIC_MICRO_PRECISION, "Micro Precision"));
            metrics.push((METRIC_MICRO_RECALL, "Micro Recall"));
        }
        let mut rows = Vec::new();
        for p in &prompts {
            for (mi, (metric, label)) in metrics.iter().enumerate() {
                let mut row = vec![if mi == 0 { p.clone() } else { String::new() }, label.to_string()];
                for m in &models {
                    for q in &questions {
                        row.push(self.get(p, m, q, metric, "").map(|v| format!("{v:.2}")).unwrap_or_default());
                    }
                }
                rows.push(row);
            }
        }
        Table { header: vec![top, sub], rows }
    }

    /// Per-option grid for one question: rows are model x option, columns
    /// are prompt x (P, R).
    pub fn option_table(&self, question: &str) -> Table {
        let (prompts, models, _) = self.axes();
        let mut options: Vec<String> = Vec::new();
        for c in self.cells.iter().filter(|c| c.question == question && !c.option.is_empty()) {
            push_unique(&mut options, &c.option);
        }
        options.sort();
        let prompts: Vec<String> = prompts
            .into_iter()
            .filter(|p| self.cells.iter().any(|c| &c.prompt == p && c.question == question && !c.option.is_empty()))
            .collect();
        let mut top = vec!["Model".to_string(), "Option".to_string()];
        let mut sub = vec![String::new(), String::new()];
        for p in &prompts {
            top.push(p.clone());
            top.push(String::new());
            sub.push("P".into());
            sub.push("R".into());
        }
        let mut rows = Vec::new();
        for m in &models {
            if !self.cells.iter().any(|c| &c.model == m && c.question == question && !c.option.is_empty()) {
                continue;
            }
            for (oi, o) in options.iter().enumerate() {
                let mut row = vec![if oi == 0 { m.clone() } else { String::new() }, o.to_ascii_uppercase()];
                for p in &prompts {
                    for metric in [METRIC_PRECISION, METRIC_RECALL] {
                        row.push(self.get(p, m, question, metric, o).map(|v| format!("{v:.2}")).unwrap_or_default());
                    }
                }
                rows.push(row);
            }
        }
        Table { header: vec![top, sub], rows }
    }

    pub fn questions(&self) -> Vec<String> {
        self.axes().2
    }
}

/// A rectangular text table with one or more header rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<Vec<String>>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn cell(&self, row: usize, col: usize) -> Option<&str> {
        self.rows.get(row)?.get(col).map(String::as_str)
    }

    /// Aligned plain text; columns separated by two spaces, trailing
    /// whitespace trimmed.
    pub fn render(&self) -> String {
        let ncols = self.header.iter().chain(&self.rows).map(Vec::len).max().unwrap_or(0);
        let mut widths = vec![0usize; ncols];
        for row in self.header.iter().chain(&self.rows) {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let mut line = |row: &Vec<String>| {
            let mut s = String::new();
            for (i, w) in widths.iter().enumerate() {
                let cell = row.get(i).map(String::as_str).unwrap_or("");
                let _ = write!(s, "{cell:<w$}  ");
            }
            out.push_str(s.trim_end());
            out.push('\n');
        };
        for h in &self.header {
            line(h);
        }
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&rule);
        for r in &self.rows {
            line(r);
        }
        out
    }
}

/// Gold sets for the runs of one question, keyed by clause id.
pub fn pair_with_gold<'a>(
    predicted: impl IntoIterator<Item = (&'a str, &'a BTreeSet<char>)>,
    gold: &BTreeMap<String, BTreeSet<char>>,
) -> Result<Vec<ScoredItem>, MetricsError> {
    predicted
        .into_iter()
        .map(|(id, p)| {
            let g = gold.get(id).ok_or_else(|| MetricsError::MissingGold(id.to_string()))?;
            Ok(ScoredItem {
                clause_id: id.to_string(),
                predicted: p.clone(),
                gold: g.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(p: &str, g: &str) -> ScoredItem {
        ScoredItem {
            clause_id: format!("{p}-{g}"),
            predicted: p.chars().collect(),
            gold: g.chars().collect(),
        }
    }

    fn q1() -> QuestionSpec {
        QuestionBank::default_bank().get("Q1").unwrap().clone()
    }

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match_accuracy(&[item("a", "a")]).unwrap(), Ratio::from_integer(1));
        let three = [item("a", "a"), item("b", "a"), item("cd", "dc")];
        assert_eq!(exact_match_accuracy(&three).unwrap(), Ratio::new(2, 3));
        assert_eq!(exact_match_accuracy(&[item("ab", "a")]).unwrap(), Ratio::from_integer(0));
        assert_eq!(exact_match_accuracy(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn confusion_examples() {
        // gold membership of 'd' [1,1,0,0], predicted [1,0,1,0]
        let items = [item("d", "d"), item("", "d"), item("d", "a"), item("", "a")];
        let c = option_confusion(&items, &q1(), 'd').unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (1, 1, 1, 1));
        assert_eq!(precision_recall(&c), (Some(Ratio::new(1, 2)), Some(Ratio::new(1, 2))));

        let empty = [item("", "a"), item("", "a")];
        let c = option_confusion(&empty, &q1(), 'a').unwrap();
        assert_eq!((c.tp, c.fn_), (0, 2));
        assert_eq!(precision_recall(&c), (None, Some(Ratio::from_integer(0))));

        let perfect = [item("ab", "ab"), item("c", "c")];
        for letter in "abcdefg".chars() {
            let c = option_confusion(&perfect, &q1(), letter).unwrap();
            assert_eq!((c.fp, c.fn_), (0, 0));
        }
        assert_eq!(option_confusion(&perfect, &q1(), 'z'), Err(MetricsError::OutOfDomain('z', "Q1".into())));
    }

    #[test]
    fn perfect_option_precision_recall() {
        let c = OptionConfusion { option: 'a', tp: 2, fp: 0, fn_: 0, tn: 0 };
        assert_eq!(precision_recall(&c), (Some(Ratio::from_integer(1)), Some(Ratio::from_integer(1))));
    }

    #[test]
    fn macro_average_examples() {
        let m = macro_average(&[Some(Ratio::from_integer(1)), Some(Ratio::new(1, 2)), None]).unwrap();
        assert_eq!(m.value, Ratio::new(3, 4));
        assert_eq!(m.excluded, 1);
        assert_eq!(macro_average(&[Some(Ratio::new(2, 5))]).unwrap().value, Ratio::new(2, 5));
        assert_eq!(macro_average(&[None, None]), Err(MetricsError::AllUndefined));
    }

    #[test]
    fn report_row_for_option_d() {
        let items = [item("d", "d"), item("", "d"), item("d", "a"), item("", "a")];
        let r = score(&items, &q1(), "P1", "m", ConstraintMode::Observe, EvalCounts::default()).unwrap();
        let d = r.per_option.iter().find(|o| o.option == 'd').unwrap();
        assert_eq!((d.precision, d.recall, d.support), (Some(0.5), Some(0.5), 2));
    }

    #[test]
    fn grid_rejects_duplicates_and_round_trips_csv() {
        let mut g = ResultGrid::default();
        let cell = GridCell {
            prompt: "P1".into(),
            model: "m".into(),
            question: "Q1".into(),
            metric: METRIC_EXACT_MATCH.into(),
            option: String::new(),
            value: 0.5,
        };
        g.insert(cell.clone()).unwrap();
        assert!(matches!(g.insert(cell), Err(MetricsError::DuplicateCell(_))));
        assert_eq!(ResultGrid::from_csv(&g.to_csv()).unwrap(), g);
    }
}

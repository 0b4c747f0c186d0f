mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::fixture;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_clausechain"));
    c.env("SOURCE_DATE_EPOCH", "1700000000").env_remove("OPENAI_API_KEY");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn mock_run(dir: &Path, template: &str, question: &str, extra: &[&str]) -> (Output, PathBuf) {
    let trace = dir.join(format!("{template}-{question}.jsonl"));
    let dataset = fixture("dataset.jsonl");
    let script = fixture("mock_script.json");
    let mut args = vec![
        "run", "--dataset", p(&dataset), "--question", question, "--template", template, "--model", "gpt-4o", "--provider", "mock", "--script",
        p(&script), "--trace", p(&trace),
    ];
    args.extend_from_slice(extra);
    (run(&args), trace)
}

#[test]
fn questions_lists_the_bank() {
    let o = run(&["questions"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("f) There is catch-all language in the clause."));
    assert!(text.contains("exclusive: g"));
}

#[test]
fn questions_from_custom_bank_and_missing_bank() {
    let dir = tempfile::tempdir().unwrap();
    let bank = dir.path().join("bank.toml");
    std::fs::write(
        &bank,
        "[[question]]\nid = \"QZ\"\nconcept = \"notice\"\ntext = \"How is notice given?\"\n[[question.options]]\nletter = \"a\"\ntext = \"In writing.\"\n",
    )
    .unwrap();
    let o = run(&["questions", "--bank", p(&bank)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("QZ  [notice]"));
    assert!(!stdout(&o).contains("Q1"));

    let missing = dir.path().join("nope.toml");
    let o = run(&["questions", "--bank", p(&missing)]);
    assert_eq!(o.status.code(), Some(6));
    assert!(stderr(&o).contains("nope.toml"));
}

#[test]
fn run_writes_trace_and_warm_rerun_is_free() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.jsonl");
    let (o, trace) = mock_run(dir.path(), "P3", "Q1", &["--cache", p(&cache)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("20 provider calls, 20 upstream calls"), "{}", stdout(&o));
    let first = std::fs::read(&trace).unwrap();
    let (o, _) = mock_run(dir.path(), "P3", "Q1", &["--cache", p(&cache)]);
    assert!(stdout(&o).contains("0 upstream calls"), "{}", stdout(&o));
    assert_eq!(std::fs::read(&trace).unwrap(), first);

    // Replay serves the same answers from the cache alone.
    let (o, _) = mock_run(dir.path(), "P3", "Q1", &["--cache", p(&cache), "--replay"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(&trace).unwrap(), first);
}

#[test]
fn replay_with_cold_cache_fails_as_provider_error() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.jsonl");
    let (o, trace) = mock_run(dir.path(), "P1", "Q2", &["--cache", p(&cache), "--replay"]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(trace.exists());
}

#[test]
fn p5_is_not_available_for_q1() {
    let dir = tempfile::tempdir().unwrap();
    let (o, trace) = mock_run(dir.path(), "P5", "Q1", &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("P5"));
    assert!(!trace.exists());
}

#[test]
fn invalid_dataset_fails_before_any_call() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"clause_id\":\"x\",\"question_id\":\"Q1\",\"concept\":\"change-of-control\",\"clause_text\":\"t\",\"gold\":[\"z\"]}\n").unwrap();
    let o = run(&["run", "--dataset", p(&bad), "--question", "Q1", "--template", "P1", "--model", "m", "--base-url", "http://127.0.0.1:9/v1"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn missing_credential_is_a_config_error() {
    let dataset = fixture("dataset.jsonl");
    let o = run(&["run", "--dataset", p(&dataset), "--question", "Q1", "--template", "P1", "--model", "m", "--base-url", "http://127.0.0.1:9/v1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("OPENAI_API_KEY"));
}

#[test]
fn config_file_cannot_hold_a_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "api_key = \"sk-123\"\n").unwrap();
    let o = run(&["--config", p(&cfg), "questions"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_model_map_and_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "cache = \"cache.jsonl\"\nparallelism = 2\n[models]\n\"GPT-4o\" = \"gpt-4o-2024-05-13\"\n").unwrap();
    let trace = dir.path().join("t.jsonl");
    let dataset = fixture("dataset.jsonl");
    let script = fixture("mock_script.json");
    let o = run(&[
        "--config", p(&cfg), "run", "--dataset", p(&dataset), "--question", "Q2", "--template", "P1", "--model", "GPT-4o", "--provider", "mock",
        "--script", p(&script), "--trace", p(&trace),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("cache.jsonl").exists());
    let header = std::fs::read_to_string(&trace).unwrap();
    assert!(header.contains("\"model_id\":\"gpt-4o-2024-05-13\""));
    assert!(header.contains("\"model_label\":\"GPT-4o\""));
    let o = run(&["eval", p(&trace), "--dataset", p(&dataset), "--format", "csv"]);
    assert!(stdout(&o).contains("P1,GPT-4o,Q2,exact_match,,"), "{}", stdout(&o));
}

fn small_dataset(dir: &Path) -> PathBuf {
    let path = dir.join("small.jsonl");
    let rows = [
        ("s1", "Assignment requires the written consent of Lessor.", "c"),
        ("s2", "Lessee may assign this lease freely.", "a"),
        ("s3", "Lessee may not assign this lease.", "f"),
    ];
    let mut text = String::new();
    for (id, clause, gold) in rows {
        text.push_str(&format!(
            "{{\"clause_id\":\"{id}\",\"question_id\":\"Q2\",\"concept\":\"assignment\",\"clause_text\":\"{clause}\",\"gold\":[\"{gold}\"]}}\n"
        ));
    }
    std::fs::write(&path, text).unwrap();
    path
}

fn small_script(dir: &Path, third: &str) -> PathBuf {
    let path = dir.join(format!("script-{third}.json"));
    let script = serde_json::json!({"rules": [
        {"contains": "written consent of Lessor", "response": "[{\"bucket\":\"c\"}]"},
        {"contains": "assign this lease freely", "response": "[{\"bucket\":\"a\"}]"},
        {"contains": "may not assign this lease", "response": format!("[{{\"bucket\":\"{third}\"}}]")}
    ]});
    std::fs::write(&path, script.to_string()).unwrap();
    path
}

fn small_run(dir: &Path, third: &str) -> (PathBuf, PathBuf) {
    let dataset = small_dataset(dir);
    let script = small_script(dir, third);
    let trace = dir.join(format!("small-{third}.jsonl"));
    let o = run(&[
        "run", "--dataset", p(&dataset), "--question", "Q2", "--template", "P1", "--model", "m", "--provider", "mock", "--script", p(&script),
        "--trace", p(&trace),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    (dataset, trace)
}

#[test]
fn eval_hand_scored_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (dataset, trace) = small_run(dir.path(), "b");
    let o = run(&["eval", p(&trace), "--dataset", p(&dataset), "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["exact_match_exact"], "2/3");
    // a: P=1 R=1; b: P=0 (1 fp) R undefined; c: P=R=1; f: P undefined R=0
    assert_eq!(report["macro_precision"]["exact"], "2/3");
    assert_eq!(report["macro_precision"]["excluded"], 3);
    assert_eq!(report["macro_recall"]["exact"], "2/3");
}

#[test]
fn eval_perfect_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let (dataset, trace) = small_run(dir.path(), "f");
    let o = run(&["eval", p(&trace), "--dataset", p(&dataset), "--format", "json"]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["exact_match"], 1.0);
    for row in report["per_option"].as_array().unwrap() {
        for k in ["precision", "recall"] {
            assert!(row[k].is_null() || row[k] == 1.0, "{row}");
        }
    }
}

#[test]
fn eval_unknown_clause_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, trace) = small_run(dir.path(), "f");
    let o = run(&["eval", p(&trace), "--dataset", p(&fixture("dataset.jsonl"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("s1"), "{}", stderr(&o));
}

#[test]
fn eval_writes_all_formats() {
    let dir = tempfile::tempdir().unwrap();
    let (dataset, trace) = small_run(dir.path(), "b");
    let prefix = dir.path().join("report");
    let o = run(&["eval", p(&trace), "--dataset", p(&dataset), "--format", "text", "--format", "csv", "--format", "json", "--output", p(&prefix)]);
    assert!(o.status.success());
    for ext in ["txt", "csv", "json"] {
        assert!(prefix.with_extension(ext).exists());
    }
    let csv = std::fs::read_to_string(prefix.with_extension("csv")).unwrap();
    assert!(csv.starts_with("prompt,model,question,metric,option,value\n"));
}

#[test]
fn constraint_mode_is_chosen_at_eval_time() {
    let dir = tempfile::tempdir().unwrap();
    let (_, trace) = mock_run(dir.path(), "P1", "Q1", &[]);
    let dataset = fixture("dataset.jsonl");
    let eval = |mode: &str| {
        let o = run(&["eval", p(&trace), "--dataset", p(&dataset), "--format", "json", "--constraint-mode", mode]);
        serde_json::from_slice::<serde_json::Value>(&o.stdout).unwrap()
    };
    let observe = eval("observe");
    let enforce = eval("enforce");
    let row = |r: &serde_json::Value, letter: &str| r["per_option"].as_array().unwrap().iter().find(|o| o["option"] == letter).unwrap().clone();
    // coc-10 answers {g, a}: observe keeps a (a true positive), enforce drops it.
    assert_eq!(row(&observe, "a")["confusion"]["tp"], 3);
    assert_eq!(row(&enforce, "a")["confusion"]["tp"], 2);
    assert_eq!(observe["counts"]["constraint_violations"], 1);
}

#[test]
fn report_combines_traces_and_detects_collisions() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = fixture("dataset.jsonl");
    let mut traces = Vec::new();
    for t in ["P1", "P2", "P3", "P4"] {
        let (o, trace) = mock_run(dir.path(), t, "Q1", &[]);
        assert!(o.status.success());
        traces.push(trace);
    }
    let mut args = vec!["report", "--dataset", p(&dataset)];
    args.extend(traces.iter().map(|t| p(t)));
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let summary: Vec<&str> = text.lines().take_while(|l| !l.is_empty()).collect();
    assert_eq!(summary.len(), 3 + 12);
    for t in ["P1", "P2", "P3", "P4"] {
        assert!(summary.iter().any(|l| l.starts_with(t)));
    }

    let o = run(&["report", "--dataset", p(&dataset), p(&traces[0]), p(&traces[0])]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("(P1, gpt-4o, Q1)"), "{}", stderr(&o));
}

#[test]
fn cache_stats_and_purge() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.jsonl");
    let o = run(&["cache", "--cache", p(&cache), "stats"]);
    assert!(stdout(&o).contains("0 entries"), "{}", stdout(&o));
    let (o, _) = mock_run(dir.path(), "P1", "Q2", &["--cache", p(&cache)]);
    assert!(o.status.success());
    assert!(stdout(&run(&["cache", "--cache", p(&cache), "stats"])).contains("10 entries"));
    let o = run(&["cache", "--cache", p(&cache), "purge", "--older-than", "1h"]);
    assert!(stdout(&o).contains("removed 0 entries"), "{}", stdout(&o));
    let o = run(&["cache", "--cache", p(&cache), "purge", "--older-than", "0s"]);
    assert!(stdout(&o).contains("removed 10 entries"), "{}", stdout(&o));
    assert!(stdout(&run(&["cache", "--cache", p(&cache), "stats"])).contains("0 entries"));

    mock_run(dir.path(), "P1", "Q2", &["--cache", p(&cache)]);
    run(&["cache", "--cache", p(&cache), "purge"]);
    assert!(stdout(&run(&["cache", "--cache", p(&cache), "stats"])).contains("0 entries"));
}

#[test]
fn usage_errors_exit_2() {
    let o = run(&["run", "--question", "Q1"]);
    assert_eq!(o.status.code(), Some(2));
}

//! Exit codes, artifacts and round trips of the `snaplab` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use snaplab::fixtures;

fn snaplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snaplab")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_script(dir: &Path, json: &str) -> String {
    let p = dir.join("script.json");
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

const FORWARDED_SCRIPT: &str = r#"{"threads":[{"pid":0,"ops":[{"write":[0,2]},{"write":[0,3]}]},{"pid":1,"ops":[{"write":[1,4]}]},{"pid":2,"ops":["scan"]}]}"#;

#[test]
fn repro_scenarios_exit_zero() {
    let o = snaplab(&["repro", "naive_03"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("(0,3)"));
    assert!(stdout(&o).contains("not linearizable"));
    let o = snaplab(&["repro", "jayanti1_fig3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("(2,4)"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(snaplab(&["explore", "--alg", "nosuch", "--n", "1", "--script", "x"]).status.code(), Some(2));
    assert_eq!(snaplab(&["check", "--history", "/nonexistent.json"]).status.code(), Some(2));
    assert_eq!(snaplab(&["repro", "unknown"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    // two scanners violate the single-scanner constraint
    let script = write_script(dir.path(), r#"{"threads":[{"pid":0,"ops":["scan"]},{"pid":1,"ops":["scan"]}]}"#);
    let o = snaplab(&["explore", "--alg", "jayanti1", "--n", "1", "--script", &script]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("single scanner"));
    let script = write_script(dir.path(), FORWARDED_SCRIPT);
    let o = snaplab(&["explore", "--alg", "jayanti1", "--n", "2", "--script", &script, "--mode", "exhaustive:10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dfs"));
}

#[test]
fn explore_with_oracle_passes() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(dir.path(), FORWARDED_SCRIPT);
    let out = dir.path().join("run");
    let o = snaplab(&[
        "explore", "--alg", "jayanti1", "--n", "2", "--script", &script, "--mode", "dfs:500", "--check", "F,S",
        "--oracle", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["histories"], 500);
    assert_eq!(summary["failed"], 0);
}

#[test]
fn fixed_schedule_from_file_matches_repro() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(dir.path(), FORWARDED_SCRIPT);
    let sched = dir.path().join("schedule.json");
    fs::write(&sched, "[2,2,2,2,0,0,0,0,1,2,2,2,2]").unwrap();
    let out = dir.path().join("run");
    let mode = format!("fixed:{}", sched.display());
    let o = snaplab(&[
        "explore", "--alg", "jayanti1", "--n", "2", "--script", &script, "--mode", &mode, "--out",
        out.to_str().unwrap(), "--keep-all",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let repro_dir = dir.path().join("repro");
    snaplab(&["repro", "jayanti1_fig3", "--out", repro_dir.to_str().unwrap()]);
    assert_eq!(
        fs::read_to_string(out.join("histories/h000000.history.json")).unwrap(),
        fs::read_to_string(repro_dir.join("history.json")).unwrap()
    );
}

/// Re-checking an explored history yields the report written during
/// exploration.
#[test]
fn check_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(
        dir.path(),
        r#"{"threads":[{"pid":0,"ops":[{"write":[0,2]}]},{"pid":1,"ops":["scan"]},{"pid":2,"ops":["scan"]}]}"#,
    );
    let out = dir.path().join("run");
    let o = snaplab(&[
        "explore", "--alg", "jayanti3", "--n", "1", "--script", &script, "--mode", "random:3:4", "--out",
        out.to_str().unwrap(), "--keep-all",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for k in 0..4 {
        let h = out.join(format!("histories/h{k:06}.history.json"));
        let o = snaplab(&["check", "--history", h.to_str().unwrap(), "--check", "all"]);
        assert_eq!(o.status.code(), Some(0));
        let written = fs::read_to_string(out.join(format!("histories/h{k:06}.report.json"))).unwrap();
        assert_eq!(stdout(&o).trim(), written.trim());
        let o = snaplab(&["linearize", "--history", h.to_str().unwrap(), "--oracle"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let written = fs::read_to_string(out.join(format!("histories/h{k:06}.linearization.json"))).unwrap();
        assert_eq!(stdout(&o).trim(), written.trim());
    }
}

#[test]
fn corrupted_history_exits_one_with_axiom_ids() {
    let dir = tempfile::tempdir().unwrap();
    for f in fixtures::all() {
        let p = dir.path().join("h.json");
        fs::write(&p, f.history.to_json()).unwrap();
        let o = snaplab(&["check", "--history", p.to_str().unwrap(), "--suites", f.suite.name()]);
        assert_eq!(o.status.code(), Some(1), "{}", f.name);
        assert!(stderr(&o).contains(f.expected), "{}: {}", f.name, stderr(&o));
    }
}

#[test]
fn dump_edges_lists_relations() {
    let dir = tempfile::tempdir().unwrap();
    let repro_dir = dir.path().join("repro");
    snaplab(&["repro", "jayanti1_fig3", "--out", repro_dir.to_str().unwrap()]);
    let h = repro_dir.join("history.json");
    let o = snaplab(&["dump-edges", "--history", h.to_str().unwrap(), "--closure"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sets: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let labels: Vec<&str> = sets.as_array().unwrap().iter().map(|s| s["label"].as_str().unwrap()).collect();
    for l in ["rf", "ll", "fwd", "wr", "sc", "rb", "hb"] {
        assert!(labels.contains(&l), "missing {l} in {labels:?}");
    }
    let fwd = sets.as_array().unwrap().iter().find(|s| s["label"] == "fwd").unwrap();
    assert_eq!(fwd["pairs"].as_array().unwrap().len(), 1);
}

#[test]
fn stress_small_run_passes() {
    let o = snaplab(&["stress", "--alg", "jayanti2", "--n", "2", "--threads", "3", "--ops", "30", "--runs", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(s["runs"], 3);
    assert_eq!(s["failed"], 0);
}

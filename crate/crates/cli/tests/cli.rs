use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "fixtures", name]
        .iter()
        .collect();
    p.to_string_lossy().into_owned()
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osn-rebac"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn lines(path: &std::path::Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn run_clean_scenario_exits_zero() {
    let o = cli(&["run", &fixture("kdb.json")]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).lines().count() >= 16);
}

#[test]
fn run_with_alerts_exits_one_unless_allowed() {
    let file = fixture("horoscope.json");
    assert_eq!(cli(&["run", &file]).status.code(), Some(1));
    assert_eq!(cli(&["run", &file, "--allow-alerts"]).status.code(), Some(0));
}

#[test]
fn run_writes_logs_to_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "run",
        &fixture("horoscope.json"),
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--allow-alerts",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let decisions = lines(&dir.path().join("decisions.jsonl"));
    let alerts = lines(&dir.path().join("alerts.jsonl"));
    assert_eq!(decisions.len(), 13);
    assert_eq!(alerts.len(), 6);
    assert!(decisions
        .iter()
        .all(|d| d["outcome"] == "grant" || d["outcome"] == "deny"));
    assert!(!lines(&dir.path().join("iflog.jsonl")).is_empty());
}

#[test]
fn run_is_reproducible() {
    let a = cli(&["--format", "json", "run", &fixture("kdb.json")]);
    let b = cli(&["--format", "json", "run", &fixture("kdb.json")]);
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["decisions"].as_array().unwrap().len(), 16);
}

#[test]
fn audit_policies_reports_clean() {
    for extra in [&[][..], &["--assume-consent"][..]] {
        let mut args = vec!["--format", "json", "audit", "policies"];
        let file = fixture("kdb.json");
        args.push(&file);
        args.extend_from_slice(extra);
        let o = cli(&args);
        assert_eq!(o.status.code(), Some(0));
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!(v["oversharing"].as_array().unwrap().is_empty());
        assert!(v["undersharing"].as_array().unwrap().is_empty());
        assert!(v["checked"].as_u64().unwrap() > 0);
    }
}

#[test]
fn audit_flows_rechecks_a_recorded_log() {
    let dir = tempfile::tempdir().unwrap();
    let file = fixture("horoscope.json");
    cli(&[
        "run",
        &file,
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--allow-alerts",
    ]);
    let log = dir.path().join("iflog.jsonl");
    let o = cli(&[
        "--format",
        "json",
        "audit",
        "flows",
        &file,
        "--log",
        log.to_str().unwrap(),
    ]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["mismatches"].as_array().unwrap().is_empty(), "{v}");
    assert!(!v["blocked"].as_array().unwrap().is_empty());
    assert_eq!(o.status.code(), Some(1));

    // Flip a blocked verdict and the re-check catches it.
    let tampered: String =
        std::fs::read_to_string(&log)
            .unwrap()
            .replacen("\"verdict\":\"blocked\"", "\"verdict\":\"permitted\"", 1);
    std::fs::write(&log, tampered).unwrap();
    let o = cli(&[
        "--format",
        "json",
        "audit",
        "flows",
        &file,
        "--log",
        log.to_str().unwrap(),
    ]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["mismatches"].as_array().unwrap().len(), 1);
}

#[test]
fn explain_names_the_winning_policy() {
    let o = cli(&[
        "--format",
        "json",
        "explain",
        &fixture("conflict.json"),
        "--request",
        "buzz/B1,w/wall,app_notification",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["decision"]["outcome"], "grant");
    assert_eq!(v["decision"]["matched_policy"], "u-allow");
    assert_eq!(v["policies"].as_array().unwrap().len(), 2);
}

#[test]
fn explain_text_shows_condition_trace() {
    let o = cli(&[
        "explain",
        &fixture("horoscope.json"),
        "--request",
        "horoscope/C1,ann/dob,read",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("policy ann-dob"), "{out}");
    assert!(out.contains("applies to request"), "{out}");
}

#[test]
fn load_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"graph\": {\"users\": [\"a\"],}").unwrap();
    let o = cli(&["run", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));

    assert_eq!(cli(&["run", "/nonexistent/scenario.json"]).status.code(), Some(2));
    let o = cli(&["explain", &fixture("kdb.json"), "--request", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    let o = cli(&["explain", &fixture("kdb.json"), "--request", "mario/M9,tom/name,read"]);
    assert_eq!(o.status.code(), Some(2));
}

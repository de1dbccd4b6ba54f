use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn carrier() -> Command {
    Command::new(env!("CARGO_BIN_EXE_carrier"))
}

fn run(args: &[&str]) -> Output {
    carrier().args(args).output().expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn simulate_writes_thirty_files_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = run(&["simulate", "--seed", "7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let mut names: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.len(), 31);
    assert_eq!(names[0], "manifest.json");
    assert!(names[1..].iter().all(|n| n.starts_with("session_") && n.ends_with(".jsonl")));
}

#[test]
fn aggregate_on_empty_store_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("empty");
    let csv = dir.path().join("fig6.csv");
    let o = run(&["aggregate", "--store", store.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("no sessions"), "{}", text(&o.stderr));
    assert!(!csv.exists());
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(run(&["simulate", "--sessions", "many"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["report"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn selftest_passes_and_prints_trend_signs() {
    let o = run(&["selftest", "--seed", "7"]);
    let out = text(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{out}{}", text(&o.stderr));
    assert!(out.contains("pressure mean trend: +"), "{out}");
    assert!(out.contains("audio mean trend:    -"), "{out}");
    assert!(out.contains("heart rate slope:    -"), "{out}");
    assert!(out.contains("resp rate slope:     -"), "{out}");
}

fn session_ids(store: &Path) -> Vec<String> {
    let index = std::fs::read_to_string(store.join("index.jsonl")).unwrap();
    index.lines().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["session_id"].as_str().unwrap().to_string()).collect()
}

#[test]
fn serve_replay_analyze_report() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let sim = dir.path().join("sim");
    let o = run(&["simulate", "--sessions", "2", "--duration-s", "60", "--out", sim.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));

    let mut server = carrier()
        .args(["serve", "--store", store.to_str().unwrap(), "--listen", "127.0.0.1:0", "--stop-after-sessions", "1"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdout = BufReader::new(server.stdout.take().unwrap());
    let mut first = String::new();
    stdout.read_line(&mut first).unwrap();
    let addr = first.trim().strip_prefix("listening on ").expect("address line").to_string();

    let file = sim.join("session_000.jsonl");
    let o = run(&["replay", file.to_str().unwrap(), "--target", &addr, "--speed", "max"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let status = server.wait().unwrap();
    assert!(status.success());

    let ids = session_ids(&store);
    assert_eq!(ids.len(), 1);
    let o = run(&["analyze", "--store", store.to_str().unwrap(), "--session", &ids[0], "--json"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["session_id"], ids[0].as_str());
    assert!(m["channels"]["pressure_gf"]["mean"].is_number());

    let o = run(&["report", "--store", store.to_str().unwrap(), "--session", &ids[0], "--offline", "--json"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["report"]["source"], "template");
    assert!(store.join("reports").join(format!("{}.json", ids[0])).exists());

    let o = run(&["analyze", "--store", store.to_str().unwrap(), "--session", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cosentinel"));
    c.env_remove("COSENTINEL_TZ_OFFSET_MIN");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn classify_prints_band_and_exposure() {
    let o = run(&["classify", "89.79"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("band: VeryDanger15"), "{out}");
    assert!(out.contains("max safe exposure: 0 min"), "{out}");

    let o = run(&["classify", "41.23"]);
    assert!(stdout(&o).contains("max safe exposure: 30 min"));
}

#[test]
fn classify_rejects_bad_input_with_usage_code() {
    for bad in ["-3", "abc", "NaN", "inf"] {
        let o = run(&["classify", bad]);
        assert_eq!(o.status.code(), Some(2), "input {bad}");
        assert!(o.stdout.is_empty());
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["report"]).status.code(), Some(2));
    assert_eq!(run(&["report", "--store", "x", "--recommend-min-band", "Lethal"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--days", "0"]).status.code(), Some(2));
}

#[test]
fn missing_store_is_operational_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["report", "--store", p(&dir.path().join("absent.jsonl"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_ingest_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames.txt");
    let store = dir.path().join("store.jsonl");

    let o = run(&["simulate", "--sigma", "0", "--seed", "7", "--out", p(&frames)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&frames).unwrap().lines().count(), 450);

    let o = run(&["ingest", "--in", p(&frames), "--store", p(&store)]);
    assert_eq!(o.status.code(), Some(0));
    let stats: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(stats["accepted"], 450);
    assert_eq!(stats["rejected"], 0);

    let o = run(&["report", "--store", p(&store)]);
    assert_eq!(o.status.code(), Some(0));
    let table = stdout(&o);
    assert!(table.contains("49.59656"), "{table}");
    assert!(table.contains("89.79"));

    let o = run(&["report", "--store", p(&store), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["report"]["cells"].as_array().unwrap().len(), 15);

    let geo = dir.path().join("out.geojson");
    let o = run(&["export-geojson", "--store", p(&store), "--out", p(&geo)]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&geo).unwrap()).unwrap();
    assert_eq!(v["type"], "FeatureCollection");
}

#[test]
fn stdin_route_matches_file_route() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames.txt");
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");

    // Default noise, so the stores carry non-trivial values.
    assert!(run(&["simulate", "--seed", "42", "--out", p(&frames)]).status.success());
    let mut data = std::fs::read(&frames).unwrap();
    data.extend_from_slice(b"$COMO,DEV01,1,2,3*00\n");

    std::fs::write(&frames, &data).unwrap();
    let o = run(&["ingest", "--in", p(&frames), "--store", p(&a)]);
    assert!(o.status.success());

    let mut child = bin()
        .args(["ingest", "--in", "-", "--store", p(&b)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&data).unwrap();
    let o2 = child.wait_with_output().unwrap();
    assert!(o2.status.success());

    assert_eq!(o.stdout, o2.stdout);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn simulate_is_deterministic_and_honours_tz_env() {
    let a = run(&["simulate", "--seed", "3", "--days", "1"]);
    let b = run(&["simulate", "--seed", "3", "--days", "1"]);
    assert_eq!(a.stdout, b.stdout);
    assert!(!a.stdout.is_empty());

    let shifted = bin()
        .args(["simulate", "--seed", "3", "--days", "1"])
        .env("COSENTINEL_TZ_OFFSET_MIN", "0")
        .output()
        .unwrap();
    assert!(shifted.status.success());
    assert_ne!(a.stdout, shifted.stdout);
}

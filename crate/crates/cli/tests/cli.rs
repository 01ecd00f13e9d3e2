use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn oscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oscope")).args(args).env("OSCOPE_THREADS", "1").output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const CHAIN: &str = r#"{
  "name": "NAME",
  "seed": SEED,
  "forge": { "vocabulary": "comco", "n_objects": 4, "count": 200, "scenarios": false, "claim1": { "count": 20 } },
  "mock_encode": { "dim": 32, "text_decay": 0.6 },
  "probe": {}
}"#;

fn chain(dir: &Path, name: &str, seed: u64) -> PathBuf {
    let cfg =
        write_config(dir, &format!("{name}.json"), &CHAIN.replace("NAME", name).replace("SEED", &seed.to_string()));
    let out = dir.join(name);
    let o = oscope(&["run", "-c", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn chain_writes_probe_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = chain(tmp.path(), "chain", 3);
    let csv = std::fs::read_to_string(out.join("probe/report.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(header.len() > 2, "{header:?}");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.len() == header.len()));
    assert!(rows.iter().any(|r| r[0] == "tor"), "{csv}");
    assert!(out.join("run_manifest.json").exists());
}

#[test]
fn stages_resume_from_earlier_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &CHAIN.replace("NAME", "steps").replace("SEED", "5"));
    let out = tmp.path().join("steps");
    for verb in ["forge", "mock-encode", "probe"] {
        let o = oscope(&[verb, "-c", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{verb}: {}", stderr(&o));
    }
    let whole = chain(tmp.path(), "whole", 5);
    assert_eq!(
        std::fs::read(out.join("probe/report.csv")).unwrap(),
        std::fs::read(whole.join("probe/report.csv")).unwrap()
    );
}

#[test]
fn invalid_enum_is_a_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg =
        write_config(tmp.path(), "bad.json", r#"{ "name": "bad", "seed": 1, "mock_encode": { "format": "parquet" } }"#);
    let o = oscope(&["run", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mock_encode.format"), "{}", stderr(&o));
}

#[test]
fn unknown_field_is_a_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", r#"{ "name": "bad", "seed": 1, "forge": { "cuont": 3 } }"#);
    let o = oscope(&["forge", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cuont"), "{}", stderr(&o));
}

#[test]
fn missing_input_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = oscope(&["run", "-c", tmp.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let cfg = write_config(
        tmp.path(),
        "stats.json",
        r#"{ "name": "s", "seed": 1, "stats": { "detections": "no_such_file.jsonl" } }"#,
    );
    let o = oscope(&["stats", "-c", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn computation_error_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sim.json",
        r#"{ "name": "s", "seed": 1, "simulate": { "theorem": { "d": 8, "k": 8, "b": [1], "trials": 4 } } }"#,
    );
    let o = oscope(&["simulate", "-c", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn report_compares_two_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = chain(tmp.path(), "run-a", 1);
    let b = chain(tmp.path(), "run-b", 2);
    let rep = tmp.path().join("report");
    std::fs::create_dir_all(&rep).unwrap();
    let o = oscope(&["report", a.to_str().unwrap(), b.to_str().unwrap(), "--out", rep.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(rep.join("report_probe.csv")).unwrap();
    let tor: Vec<&str> = csv.lines().filter(|l| l.split(',').nth(2) == Some("tor")).collect();
    assert_eq!(tor.len(), 2, "{csv}");
    assert!(tor[0].starts_with("run-a,") && tor[1].starts_with("run-b,"));
    let md = std::fs::read_to_string(rep.join("report.md")).unwrap();
    assert!(md.contains("full gallery"), "{md}");
    assert!(md.contains("| run-a |") && md.contains("**"), "{md}");
}

#[test]
fn report_on_missing_manifest_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = oscope(&["report", tmp.path().to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

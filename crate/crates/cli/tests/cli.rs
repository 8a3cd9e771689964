use std::path::Path;
use std::process::{Command, Output};

fn maxlow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maxlow")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn summary(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("summary.json")).expect("summary written");
    serde_json::from_str(&text).unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn static_run_passes_and_writes_versioned_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = maxlow(&["static", "--seed", "4", "--threads", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert_eq!(s["schema"], "maxlow-summary v1");
    assert_eq!(s["passed"], true);
    assert_eq!(s["config"]["seed"], 4);
    assert_eq!(s["config"]["grid"]["n"], 8);
    let files = s["files"].as_array().unwrap();
    assert!(!files.is_empty());
    for f in files {
        let csv = std::fs::read_to_string(out.join(f.as_str().unwrap())).unwrap();
        assert_eq!(csv.lines().next(), Some("# maxlow-csv v1"));
    }
}

#[test]
fn same_seed_gives_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let o = maxlow(&["static", "--seed", "9", "--out", d.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    let files = summary(&a)["files"].as_array().unwrap().clone();
    for f in files {
        let f = f.as_str().unwrap();
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_seed_fails_but_writes_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let o = maxlow(&["spectrum", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let s = summary(tmp.path());
    assert_eq!(s["passed"], false);
    assert!(s["error"].as_str().unwrap().contains("seed"));
}

#[test]
fn empty_frequency_list_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"seed": 1, "frequencies": []}"#);
    let o = maxlow(&["lowfreq-sweep", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(summary(tmp.path())["error"].as_str().unwrap().contains("frequency"));
}

#[test]
fn unknown_keys_and_mismatched_experiment_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let cfg = write_config(tmp.path(), r#"{"seed": 1, "grid": {"size": 3}}"#);
    assert_eq!(maxlow(&["spectrum", "--config", &cfg, "--out", out]).status.code(), Some(2));
    let cfg = write_config(tmp.path(), r#"{"experiment": "static-solve", "seed": 1}"#);
    assert_eq!(maxlow(&["spectrum", "--config", &cfg, "--out", out]).status.code(), Some(2));
}

#[test]
fn verify_b1_on_solid_cube_reports_empty_set() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"seed": 2, "grid": {"geometry": "solid-cube", "n": 6, "h": 0.25}}"#,
    );
    let o = maxlow(&["verify-b1", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let s = summary(tmp.path());
    assert_eq!(s["flags"]["electric_steps"], true);
    let steps = std::fs::read_to_string(tmp.path().join("verify-b1-steps.csv")).unwrap();
    let header: Vec<&str> = steps.lines().nth(1).unwrap().split(',').collect();
    let basis = header.iter().position(|c| *c == "basis").unwrap();
    let first = steps.lines().nth(2).unwrap().split(',').nth(basis).unwrap();
    assert_eq!(first, "0");
}

#[test]
fn failing_flag_gives_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    // the cavity has one electric harmonic field, so expecting none must fail
    let cfg = write_config(tmp.path(), r#"{"seed": 3, "expected_dims": [0, 0], "invariance_seeds": []}"#);
    let o = maxlow(&["spectrum", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let s = summary(tmp.path());
    assert_eq!(s["flags"]["expected_dimensions"], false);
    assert_eq!(s["passed"], false);
}

#[test]
fn print_config_echoes_defaults() {
    let o = maxlow(&["neumann-check", "--seed", "5", "--print-config", "--out", "unused"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["experiment"], "neumann-check");
    assert_eq!(v["frequencies"].as_array().unwrap().len(), 4);
    assert!(!Path::new("unused").exists());
}

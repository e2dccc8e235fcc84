use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn jsdlfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jsdlfi")).args(args).output().unwrap()
}

fn cfg(name: &str) -> String {
    configs().join(name).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn simulate_csv_and_json() {
    let o = jsdlfi(&["simulate", "--config", &cfg("simulate_softmax.json")]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("epoch,count_1,count_2,count_3,count_4,count_5\n1,"));
    let j = jsdlfi(&["simulate", "--config", &cfg("simulate_nfds.json"), "--format", "json", "--seed", "3"]);
    let v: serde_json::Value = serde_json::from_slice(&j.stdout).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["kind"], "simulate");
}

#[test]
fn jsd_between_count_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.json", "[10, 0]");
    let q = write(dir.path(), "q.csv", "5,5\n");
    let o = jsdlfi(&["jsd", "--p", &p, "--q", &q]);
    assert_eq!(o.status.code(), Some(0));
    let line = stdout(&o).lines().find(|l| l.starts_with("jsd,")).unwrap().to_string();
    let v: f64 = line[4..].parse().unwrap();
    assert!((v - 0.215762).abs() < 1e-6);
    let three = write(dir.path(), "r.json", "[1, 2, 3]");
    assert_eq!(jsdlfi(&["jsd", "--p", &p, "--q", &three]).status.code(), Some(2));
}

#[test]
fn moments_and_teststat() {
    let o = jsdlfi(&["moments", "--config", &cfg("moments.json"), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["mse"].as_f64().unwrap() > v["variance"].as_f64().unwrap());
    let t = jsdlfi(&["teststat", "--config", &cfg("teststat.json")]);
    assert_eq!(t.status.code(), Some(0));
    assert_eq!(stdout(&t).lines().count(), 5);
}

#[test]
fn confset_and_coverage_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("set.csv");
    let o = jsdlfi(&[
        "confset",
        "--config",
        &cfg("confset_softmax.json"),
        "--observed",
        &cfg("observed_softmax.csv"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 82);

    let small = write(
        dir.path(),
        "cov.json",
        r#"{"model": {"model": "bernoulli", "params": {}}, "theta": [0.4], "n_obs": [50], "m": 20, "replicates": 10}"#,
    );
    let c = jsdlfi(&["coverage", "--config", &small, "--format", "json", "--workers", "2"]);
    assert_eq!(c.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&c.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 4);
    assert_eq!(v["failures"], 0);
}

#[test]
fn bolfi_and_nfds_ess_small() {
    let dir = tempfile::tempdir().unwrap();
    let b = write(
        dir.path(),
        "bolfi.json",
        r#"{"model": {"model": "softmax_decay", "params": {"k": 5}}, "theta": [0.2], "n_obs": 500,
            "bo": {"init_count": 10, "budget": 40}}"#,
    );
    let o = jsdlfi(&["bolfi", "--config", &b, "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let theta = v["minimizer"][0].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&theta));
    assert_eq!(v["surrogate"]["inputs"].as_array().unwrap().len(), 40);

    let n = write(
        dir.path(),
        "nfds.json",
        r#"{"model": {"model": "nfds_lite", "params": {}}, "theta": [-5.3, -2.5, -5.3], "n_obs": [200],
            "sim_size": "n_o", "m": 20, "replicates": 4, "ess": "per-theta"}"#,
    );
    let o = jsdlfi(&["nfds-ess", "--config", &n]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 9);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // missing config, unreadable config, malformed values
    assert_eq!(jsdlfi(&["coverage"]).status.code(), Some(2));
    assert_eq!(jsdlfi(&["coverage", "--config", "/nonexistent.json"]).status.code(), Some(2));
    let bad = write(dir.path(), "bad.json", r#"{"model": {"model": "bernoulli", "params": {}}, "theta": [2.0], "n_obs": [5]}"#);
    assert_eq!(jsdlfi(&["coverage", "--config", &bad]).status.code(), Some(2));
    assert_eq!(jsdlfi(&["no-such-command"]).status.code(), Some(2));
    let wrong_model = write(dir.path(), "w.json", r#"{"model": {"model": "bernoulli", "params": {}}, "theta": [0.2], "n_obs": [5]}"#);
    assert_eq!(jsdlfi(&["nfds-ess", "--config", &wrong_model]).status.code(), Some(2));
    // a runtime failure: the output path cannot be written
    let out = dir.path().join("missing-dir").join("x.csv");
    let o = jsdlfi(&["teststat", "--config", &cfg("teststat.json"), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    // the exact estimator on a model without a likelihood
    let nfds = write(
        dir.path(),
        "nfds-exact.json",
        r#"{"model": {"model": "nfds_lite", "params": {}}, "theta": [-5.3, -2.5, -5.3], "n_obs": [100],
            "estimation": "exact", "grid": {"points": [[-5.3, -2.5, -5.3]]}}"#,
    );
    let obs = write(dir.path(), "obs.csv", "3,60,30,7\n5,55,35,5\n");
    let o = jsdlfi(&["confset", "--config", &nfds, "--observed", &obs]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

use std::path::PathBuf;

use jsdlfi::harness::{run_confset, run_coverage, run_nfds_ess_study, write_confset_csv, ExperimentConfig};
use jsdlfi::EmpiricalCounts;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(&std::fs::read_to_string(configs_dir().join(name)).unwrap()).unwrap()
}

fn small_softmax() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{"model": {"model": "softmax_decay", "params": {"k": 5}}, "theta": [0.2], "n_obs": [200, 400],
            "sim_size": {"multiple": 20}, "m": 60, "replicates": 80, "seed": 3}"#,
    )
    .unwrap()
}

#[test]
fn single_replicate_gives_zero_or_one() {
    let mut cfg = small_softmax();
    cfg.replicates = 1;
    let t = run_coverage(&cfg, 1).unwrap();
    assert!(t.rows.iter().all(|r| r.coverage == 0.0 || r.coverage == 1.0));
    assert!(t.rows.iter().all(|r| r.replicates == 1));
}

#[test]
fn coverage_is_monotone_in_alpha() {
    let t = run_coverage(&small_softmax(), 1).unwrap();
    for n in [200, 400] {
        let covs: Vec<f64> = t.rows.iter().filter(|r| r.n_obs == n).map(|r| r.coverage).collect();
        assert_eq!(covs.len(), 4);
        assert!(covs.windows(2).all(|w| w[0] >= w[1]), "{covs:?}");
    }
}

#[test]
fn replay_is_byte_identical_across_workers() {
    let cfg = small_softmax();
    let a = run_coverage(&cfg, 1).unwrap().to_csv_string().unwrap();
    let b = run_coverage(&cfg, 1).unwrap().to_csv_string().unwrap();
    let c = run_coverage(&cfg, 3).unwrap().to_csv_string().unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert!(a.starts_with("n_obs,alpha,coverage,se,replicates\n"));
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(a, run_coverage(&other, 1).unwrap().to_csv_string().unwrap());
}

#[test]
fn exact_mode_runs_for_tractable_models() {
    let mut cfg = small_softmax();
    cfg.estimation = serde_json::from_str("\"exact\"").unwrap();
    let t = run_coverage(&cfg, 1).unwrap();
    assert_eq!(t.failures, 0);
    let row = t.row(400, 0.5).unwrap();
    assert!((0.2..=0.8).contains(&row.coverage));
}

#[test]
fn shipped_coverage_configs_have_no_failures() {
    for name in ["experiment1_softmax.json", "experiment2_loglinear.json", "experiment2_saturated.json"] {
        let t = run_coverage(&load(name), 1).unwrap();
        assert_eq!(t.failures, 0, "{name}");
        assert_eq!(t.rows.len(), load(name).n_obs.len() * 4);
    }
}

#[test]
fn shipped_nfds_config_has_no_failures() {
    let study = run_nfds_ess_study(&load("nfds_ess.json"), 1).unwrap();
    assert_eq!(study.raw.failures, 0);
    assert_eq!(study.corrected.failures, 0);
    assert!(study.mean_ess.iter().zip(&study.n_sim).all(|(e, &n)| *e < n as f64));
    let mut buf = Vec::new();
    study.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().lines().next().unwrap().contains("n_eff_rule"));
}

#[test]
fn shipped_confset_accepts_generating_value() {
    let cfg = load("confset_softmax.json");
    let text = std::fs::read_to_string(configs_dir().join("observed_softmax.csv")).unwrap();
    let counts: Vec<u64> = text.trim().split(',').map(|v| v.parse().unwrap()).collect();
    let set = run_confset(&cfg, vec![EmpiricalCounts::new(counts).unwrap()], 1).unwrap();
    assert_eq!(set.points.len(), 81);
    let at_truth = set.points.iter().find(|p| (p.theta[0] - 0.2).abs() < 1e-9).unwrap();
    assert!(at_truth.accepted[1]);
    assert!(!set.points[0].accepted[0]);
}

#[test]
fn absurd_observation_gives_empty_set() {
    let mut cfg = load("confset_softmax.json");
    cfg.estimation = serde_json::from_str("\"exact\"").unwrap();
    let set = run_confset(&cfg, vec![EmpiricalCounts::new(vec![0, 0, 0, 0, 1000]).unwrap()], 1).unwrap();
    assert!((0..4).all(|a| set.is_empty(a)));
}

#[test]
fn single_point_grid_gives_one_row() {
    let cfg = ExperimentConfig::from_json(
        r#"{"model": {"model": "bernoulli", "params": {}}, "theta": [0.3], "n_obs": [100], "m": 50,
            "grid": {"points": [[0.3]]}, "alphas": [0.05]}"#,
    )
    .unwrap();
    let set = run_confset(&cfg, vec![EmpiricalCounts::new(vec![70, 30]).unwrap()], 1).unwrap();
    let mut buf = Vec::new();
    write_confset_csv(&set, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "theta_1,t_stat,accepted_0.05");
    assert_eq!(lines.len(), 2);
}

#[test]
fn collapse_rule_merges_rare_categories() {
    let cfg = ExperimentConfig::from_json(
        r#"{"model": {"model": "softmax_decay", "params": {"k": 5, "bounds": [-1, 3]}}, "theta": [2.5], "n_obs": [60],
            "m": 50, "sim_size": {"multiple": 10}, "grid": {"points": [[2.5], [0.0]]}, "collapse_below": 3, "alphas": [0.05]}"#,
    )
    .unwrap();
    let observed = EmpiricalCounts::new(vec![55, 4, 1, 0, 0]).unwrap();
    let set = run_confset(&cfg, vec![observed], 1).unwrap();
    // five categories become three: two kept plus the tail
    assert_eq!(set.points[0].dof, 2);
}

#[test]
fn bad_configs_are_config_errors() {
    for bad in [
        r#"{"model": {"model": "bernoulli", "params": {}}, "theta": [0.3], "n_obs": []}"#,
        r#"{"model": {"model": "bernoulli", "params": {}}, "theta": [0.3], "n_obs": [10], "replicates": 0}"#,
        r#"{"model": {"model": "bernoulli", "params": {}}, "theta": [0.3], "n_obs": [10], "grid": {"points": [[2.0]]}}"#,
        r#"{"model": {"model": "bernoulli", "params": {}}, "theta": [0.3], "n_obs": [10], "typo": 1}"#,
    ] {
        let e = ExperimentConfig::from_json(bad).unwrap_err();
        assert!(e.is_config(), "{bad}: {e}");
    }
}

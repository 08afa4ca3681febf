//! Small end-to-end runs of the experiment pipelines and the CLI.

use std::path::Path;
use std::process::Command;

use selfpred::harness::{
    run_cross_objective_table, run_robustness_table, run_trace_ratio_curves, run_value_mse_table, ExperimentConfig,
    Format,
};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        n_states: 6,
        n_actions: 3,
        k: 2,
        n_mdps: 6,
        n_robustness_runs: 6,
        n_reward_samples: 50,
        epsilon_list: vec![0.0, 0.1],
        ..ExperimentConfig::default()
    }
}

#[test]
fn tables_are_reproducible_and_well_formed() {
    let cfg = small();
    let (a, _, manifest) = run_cross_objective_table(&cfg).unwrap();
    let (b, _, _) = run_cross_objective_table(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(manifest.instances, cfg.n_mdps);
    for r in 0..3 {
        assert_eq!(a.pr_best[r], a.pr_matrix[r][r]);
        for c in 0..3 {
            assert!((0.0..=1.0).contains(&a.pr_matrix[r][c]));
            assert!(a.stderr[r][c] >= 0.0);
        }
        // objective r is maximized by its own representation on average
        assert!(a.mean[r][r] <= a.mean[r][0].min(a.mean[r][1]).min(a.mean[r][2]) + 1e-9);
    }
    let (v, _, _) = run_value_mse_table(&cfg).unwrap();
    assert!(v.mean.iter().flatten().all(|x| *x >= 0.0));
}

#[test]
fn zero_perturbation_leaves_every_limit_unchanged() {
    let cfg = small();
    let (t, tables, _) = run_robustness_table(&cfg).unwrap();
    let zero = &t.rows[0];
    assert_eq!(zero.epsilon, 0.0);
    // identical subspaces, up to rounding in the principal angles
    assert!(zero.mean.iter().all(|d| *d < 1e-12), "{:?}", zero.mean);
    // all three tie, and ties count for everyone
    assert_eq!(zero.pr_smallest, [1.0, 1.0, 1.0]);
    assert_eq!(tables[0].rows.len(), 3 * cfg.epsilon_list.len());
}

#[test]
fn single_action_cross_table_is_flagged_degenerate() {
    let cfg = ExperimentConfig { n_actions: 1, ..small() };
    let (t, _, _) = run_cross_objective_table(&cfg).unwrap();
    assert!(t.degenerate);
}

#[test]
fn trace_ratio_medians_span_the_grid() {
    let cfg = ExperimentConfig {
        integrator: selfpred::harness::IntegratorSettings { max_iters: 400, ..Default::default() },
        curve_stride: 50,
        ..small()
    };
    let (curves, _, _) = run_trace_ratio_curves(&cfg).unwrap();
    assert_eq!(curves.pi.iterations, (0..=400).step_by(50).collect::<Vec<_>>());
    assert_eq!(curves.pi.median.len(), curves.pi.iterations.len());
    assert!(curves.ac.median.iter().all(|r| r.is_finite() && *r > 0.0));
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_selfpred")).args(args).output().expect("binary runs")
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

#[test]
fn cli_writes_identical_outputs_for_identical_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    let cfg = ExperimentConfig { output_dir: tmp.path().join("unused"), format: Format::Json, ..small() };
    std::fs::write(&config, serde_json::to_string(&cfg).unwrap()).unwrap();
    let mut runs = Vec::new();
    for name in ["first", "second"] {
        let out = tmp.path().join(name);
        let status = run_cli(&["cross-table", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        runs.push((read(&out, "cross_table.json"), read(&out, "manifest.json")));
    }
    assert_eq!(runs[0].0, runs[1].0);
    let manifest: serde_json::Value = serde_json::from_str(&runs[0].1).unwrap();
    assert_eq!(manifest["command"], "cross-table");
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["skipped"], 0);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["files"][0], "cross_table.json");
}

#[test]
fn cli_overrides_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("demo");
    let status = run_cli(&["eigen-demo", "--n-states", "8", "--k", "3", "--seed", "4", "--out", out.to_str().unwrap()]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let csv = read(&out, "eigen_demo.csv");
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "index,lambda_0,lambda_1,pi_score,var_score,ac_score,pi_selected,ac_selected,var_selected"
    );
    assert_eq!(lines.count(), 8);
    let summary: serde_json::Value = serde_json::from_slice(&status.stdout).unwrap();
    assert!(summary["fixture_seed"].as_u64().unwrap() >= 4);

    let bad = run_cli(&["cross-table", "--k", "20", "--out", out.to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("k must lie"));
    let bad = run_cli(&["cross-table", "--format", "xml"]);
    assert!(!bad.status.success());
}

#[test]
fn config_files_reject_unknown_fields() {
    let err = serde_json::from_str::<ExperimentConfig>(r#"{"n_states": 5, "bogus": 1}"#);
    assert!(err.is_err());
    let cfg: ExperimentConfig = serde_json::from_str(r#"{"n_states": 5, "robustness_weighting": "per_state"}"#).unwrap();
    assert_eq!(cfg.n_states, 5);
    assert_eq!(cfg.robustness_weighting, selfpred::dynamics::ActionWeighting::PerState);
    assert_eq!(cfg.k, ExperimentConfig::default().k);
}

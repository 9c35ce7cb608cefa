//! Sample configs and the CLI exit-code / environment contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use afree_lab::report::{EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK};
use afree_lab::run::RunConfig;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cli(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_afree-lab"));
    cmd.args(args);
    for key in ["AFREE_CONFIG", "AFREE_OUT", "AFREE_SEED", "AFREE_THREADS", "AFREE_VERBOSE"] {
        cmd.env_remove(key);
    }
    cmd.envs(envs.iter().copied());
    cmd.output().expect("spawn CLI")
}

#[test]
fn sample_configs_parse() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 6);
}

#[test]
fn operator_check_config_runs_clean() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("operator_check_curl3.json");
    let o = cli(&["operator-check", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["results"]["rank"]["r"], 2);
    let csv = std::fs::read_to_string(out.path().join("operator_check.csv")).unwrap();
    assert!(csv.starts_with("d,l,m,samples,r,min_rank,max_rank,antisymmetry\n3,3,3,"));
}

#[test]
fn schema_violation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"command": "localize", "grid": 5}"#).unwrap();
    let o = cli(&["localize", "--out", dir.path().to_str().unwrap()], &[("AFREE_CONFIG", cfg.to_str().unwrap())]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(!dir.path().join("report.json").exists());

    let o = cli(&["homogenize", "--config", "/nonexistent/config.json"], &[]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn mismatched_subcommand_exits_2() {
    let cfg = configs_dir().join("localize.json");
    let o = cli(&["recovery", "--config", cfg.to_str().unwrap(), "--out", "/tmp/unused-afree"], &[]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn failed_invariant_exits_1_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("wrong.json");
    std::fs::write(
        &cfg,
        r#"{"command": "homogenize",
            "homogenize": {"xi": [[0.0, 1.0]], "grid": [16, 16], "expected": [1.0]}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = cli(&["homogenize", "--config", cfg.to_str().unwrap()], &[("AFREE_OUT", out.to_str().unwrap())]);
    assert_eq!(o.status.code(), Some(EXIT_INVARIANT));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    let failed: Vec<_> = report["invariants"].as_array().unwrap().iter().filter(|c| c["passed"] == false).collect();
    assert_eq!(failed.len(), 1);
    assert!(failed[0]["invariant"].as_str().unwrap().starts_with("cell_solver:"));
}

#[test]
fn seed_override_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["operator-check", "--out", dir.path().to_str().unwrap()], &[("AFREE_SEED", "42")]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 42);
}

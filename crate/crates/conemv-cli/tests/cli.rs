//! End-to-end tests of the CLI binary: artifact correctness, byte
//! reproducibility and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn conemv(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conemv"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) {
    std::fs::write(dir.join(name), body).unwrap();
}

const BS_CONFIG: &str = r#"{
  "model": { "dim": 1, "drift": [0.08], "diffusion": [[0.04]], "jumps": [], "horizon": 1.0 },
  "cone": { "type": "full", "data": 1 },
  "options": { "n_steps": 1000, "scheme": "rk4", "seed": 7 }
}"#;

const POISSON_CONFIG: &str = r#"{
  "model": { "dim": 1, "drift": [1.0], "diffusion": [[0.0]], "jumps": [{"u": [1.0], "lambda": 1.0}], "horizon": 1.0 },
  "cone": { "type": "full", "data": 1 },
  "options": { "n_steps": 200, "mc_paths": 2000, "seed": 3, "m": 1.0, "x": 0.0, "oracle_steps": [20, 40, 80] }
}"#;

#[test]
fn solve_reproduces_black_scholes_value() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "bs.json", BS_CONFIG);
    let out = conemv(&["solve", "--config", "bs.json", "--out", "run"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("run/opportunity.csv")).unwrap();
    let first_row = csv.lines().nth(1).unwrap();
    let fields: Vec<&str> = first_row.split(',').collect();
    assert_eq!(fields[0], "0");
    let l0: f64 = fields[1].parse().unwrap();
    assert!((l0 - 0.852144).abs() < 1e-6, "L(0) = {l0}");

    // manifest hashes match the artifact bytes
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("run/manifest.json")).unwrap())
            .unwrap();
    for entry in manifest["outputs"].as_array().unwrap() {
        let path = tmp.path().join("run").join(entry["path"].as_str().unwrap());
        let bytes = std::fs::read(&path).unwrap();
        let digest = {
            use sha2::{Digest, Sha256};
            let mut h = Sha256::new();
            h.update(&bytes);
            h.finalize().iter().map(|b| format!("{b:02x}")).collect::<String>()
        };
        assert_eq!(digest, entry["sha256"].as_str().unwrap());
    }
}

#[test]
fn identical_configs_reproduce_artifacts_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "p.json", POISSON_CONFIG);
    for dir in ["a", "b"] {
        let out = conemv(&["frontier", "--config", "p.json", "--out", dir], tmp.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["frontier.csv", "plot_frontier.csv", "manifest.json"] {
        let a = std::fs::read(tmp.path().join("a").join(name)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn oracle_compare_reports_first_order_convergence() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "p.json", POISSON_CONFIG);
    let out = conemv(
        &["oracle-compare", "--config", "p.json", "--out", "oc"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("oc/oracle_compare.json")).unwrap())
            .unwrap();
    let max_err = report["max_err_plus"].as_f64().unwrap();
    assert!(max_err <= 0.01, "max_err {max_err}");
    let table = report["table"].as_array().unwrap();
    assert_eq!(table.len(), 3);
    let errs: Vec<f64> = table.iter().map(|r| r["err"].as_f64().unwrap()).collect();
    for w in errs.windows(2) {
        let ratio = w[1] / w[0];
        assert!((0.35..=0.65).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn malformed_config_exits_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(
        tmp.path(),
        "bad.json",
        r#"{ "model": { "dim": 1, "drift": "oops", "diffusion": [[1.0]], "horizon": 1.0 } }"#,
    );
    let out = conemv(&["solve", "--config", "bad.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.drift"), "stderr: {err}");
}

#[test]
fn missing_cone_and_mismatched_problem_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(
        tmp.path(),
        "nocone.json",
        r#"{ "model": { "dim": 1, "drift": [0.0], "diffusion": [[1.0]], "horizon": 1.0 } }"#,
    );
    let out = conemv(&["solve", "--config", "nocone.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cone"));

    write_config(
        tmp.path(),
        "mismatch.json",
        r#"{ "model": { "dim": 1, "drift": [0.0], "diffusion": [[1.0]], "horizon": 1.0 },
             "cone": { "type": "full", "data": 1 }, "problem": "frontier" }"#,
    );
    let out = conemv(&["solve", "--config", "mismatch.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("problem"));
}

#[test]
fn solver_degeneracy_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    // enormous decay rate pushes the opportunity value through the floor
    write_config(
        tmp.path(),
        "exploding.json",
        r#"{ "model": { "dim": 1, "drift": [10.0], "diffusion": [[0.001]], "horizon": 1.0 },
             "cone": { "type": "full", "data": 1 },
             "options": { "n_steps": 64 } }"#,
    );
    let out = conemv(&["solve", "--config", "exploding.json"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("positivity"), "stderr: {err}");
}

#[test]
fn simulate_summary_hits_target_mean() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "p.json", POISSON_CONFIG);
    let out = conemv(
        &["simulate", "--config", "p.json", "--out", "sim", "--paths", "4000"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("sim/summary.json")).unwrap())
            .unwrap();
    let mean = summary["mean"].as_f64().unwrap();
    let stderr = summary["stderr"].as_f64().unwrap();
    let e_stderr = summary["e_stderr"].as_f64().unwrap();
    let scale = summary["scale"].as_f64().unwrap();
    assert!(
        (mean - 1.0).abs() <= 3.0 * (stderr + scale * e_stderr),
        "mean {mean} stderr {stderr}"
    );
    // flag override is reflected in the manifest
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("sim/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["options"]["mc_paths"].as_u64(), Some(4000));
}

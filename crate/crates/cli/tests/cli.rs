use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use teamopt::io::{read_bundle, sha256_hex};

const TOY1: &str = r#"[problem]
family = "lq-scalar"
horizon = 1.0

[run]
paths = 3000
seed = 5
steps = 20
policy_basis = "tanh"
init = [[0.3]]
"#;

fn teamopt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_teamopt"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn check_martingale_passes_on_toy1() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "toy1.toml", TOY1);
    let out = teamopt(
        dir.path(),
        &["check-martingale", "--config", "toy1.toml", "--out", "o"],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("o/martingale.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,t,mean_lambda,se,ess,max_log_lambda,pass"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.ends_with(",true")));
}

#[test]
fn missing_horizon_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "bad.toml",
        "[problem]\nfamily = \"lq-scalar\"\n",
    );
    let out = teamopt(
        dir.path(),
        &["simulate", "--config", "bad.toml", "--out", "o"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("invalid config") && err.contains("problem.horizon"),
        "{err}"
    );
    assert!(!dir.path().join("o").exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad.toml", &format!("{TOY1}extra = 1\n"));
    let out = teamopt(dir.path(), &["simulate", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.extra"));
}

#[test]
fn discrete_family_cannot_be_optimized() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "d.toml",
        "[problem]\nfamily = \"one-step-gaussian\"\n",
    );
    let out = teamopt(
        dir.path(),
        &["optimize", "--config", "d.toml", "--out", "o"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn catalog_lists_benchmarks_with_oracles() {
    let dir = tempfile::tempdir().unwrap();
    let out = teamopt(dir.path(), &["list-benchmarks", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0));
    let catalog = json(&dir.path().join("o/benchmarks.json"));
    let entries = catalog.as_array().unwrap();
    assert!(!entries.is_empty());
    let oracle = |name: &str| {
        entries
            .iter()
            .find(|e| e["name"] == name)
            .map(|e| e["oracle"].as_str().unwrap().to_string())
    };
    assert_eq!(oracle("lq-scalar").as_deref(), Some("riccati"));
    assert_eq!(
        oracle("radner-quadratic").as_deref(),
        Some("normal-equations")
    );
}

#[test]
fn manifest_lists_every_file_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "toy1.toml", TOY1);
    let out = teamopt(
        dir.path(),
        &[
            "simulate",
            "--config",
            "toy1.toml",
            "--out",
            "a",
            "--override",
            "output.formats=[\"csv\",\"json\",\"binary\"]",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = json(&dir.path().join("a/manifest.json"));
    let files = manifest["files"].as_array().unwrap();
    let mut on_disk: Vec<String> = std::fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let listed: Vec<String> = files
        .iter()
        .map(|f| f["name"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(listed, on_disk);
    for f in files {
        let bytes = std::fs::read(dir.path().join("a").join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), sha256_hex(&bytes));
    }

    // re-running from the manifest reproduces every hash
    let out = teamopt(
        dir.path(),
        &["simulate", "--config", "a/manifest.json", "--out", "a"],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let again = json(&dir.path().join("a/manifest.json"));
    assert_eq!(again["files"], manifest["files"]);

    let bundle = read_bundle(&dir.path().join("a/bundle.topb")).unwrap();
    assert_eq!(bundle.num_paths, 3000);
    assert_eq!(bundle.num_steps(), 20);
    let summary = json(&dir.path().join("a/summary.json"));
    assert_eq!(summary["measure"], "reference");
}

#[test]
fn resolved_config_spells_out_defaults() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "toy1.toml", TOY1);
    let out = teamopt(
        dir.path(),
        &[
            "simulate",
            "--config",
            "toy1.toml",
            "--out",
            "o",
            "--seed",
            "9",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let cfg = json(&dir.path().join("o/resolved_config.json"));
    assert_eq!(cfg["run"]["seed"], 9);
    assert_eq!(cfg["run"]["segmentation"], "stationary");
    assert_eq!(cfg["run"]["bsde_basis"], "quadratic");
    assert_eq!(cfg["problem"]["params"]["sigma"], 1.0);
    assert_eq!(cfg["problem"]["params"]["bound"], 5.0);
    assert_eq!(cfg["run"]["init"], serde_json::json!([[0.3]]));
}

#[test]
fn optimize_writes_traces_and_policy() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "toy1.toml", TOY1);
    let out = teamopt(
        dir.path(),
        &[
            "optimize",
            "--config",
            "toy1.toml",
            "--out",
            "o",
            "--max-cycles",
            "2",
            "--override",
            "run.policy_basis=affine",
            "--override",
            "run.init=[[0.0, 0.0]]",
        ],
    );
    assert!(
        matches!(out.status.code(), Some(0) | Some(1)),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let trace = std::fs::read_to_string(dir.path().join("o/trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,cycle,agent,payoff,residual,step,line_search_failed"));
    assert!(trace.lines().count() >= 2);
    let policy = json(&dir.path().join("o/policy.json"));
    let gain = policy["agents"][0]["params"][1].as_f64().unwrap();
    assert!(gain < -0.5, "gain {gain}");

    // the written policy is accepted back as --init
    let out = teamopt(
        dir.path(),
        &[
            "value",
            "--config",
            "toy1.toml",
            "--out",
            "v",
            "--init",
            "o/policy.json",
            "--override",
            "run.policy_basis=affine",
        ],
    );
    assert!(
        matches!(out.status.code(), Some(0) | Some(1)),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("v/value.csv").exists());
}

#[test]
fn static_compare_on_toy3() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "t.toml",
        "[problem]\nfamily = \"toy3-two-step\"\n[run]\npaths = 20000\nquadrature_order = 30\n",
    );
    let out = teamopt(
        dir.path(),
        &["static-compare", "--config", "t.toml", "--out", "o"],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = json(&dir.path().join("o/report.json"));
    assert!(report["relative_gap_quadrature"].as_f64().unwrap() < 1e-8);
}

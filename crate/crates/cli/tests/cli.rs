use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cohsync"));
    cmd.env_remove("COHSYNC_OUT");
    cmd
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("manifests").join(format!("{name}.json"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn bundled_noncollaborative_n5_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["simulate", "--manifest"])
        .arg(bundled("noncol-vicsek-n5"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("noncol-vicsek-n5");
    for file in ["design.json", "trajectory.csv", "summary.json"] {
        assert!(run_dir.join(file).is_file(), "{file}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pass"], true);
    assert_eq!(summary["agents"], 5);
}

#[test]
fn bundled_collaborative_low_threshold_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["simulate", "--manifest"])
        .arg(bundled("col-vicsek-n25-d02"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let design: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("col-vicsek-n25-d02/design.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(design["d"], 0.2);
    assert_eq!(design["collaborative"]["eta"], 8.0);
}

#[test]
fn non_minimum_phase_model_is_a_design_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("nmp.json");
    std::fs::write(
        &manifest,
        r#"{
            "name": "nmp",
            "model": {"inline": {"a": [[1, 0], [0, 2]], "b": [[1], [1]], "c": [[1, 1]], "e": [[1], [1]]}},
            "graph": {"vicsek": {"generation": 1}},
            "protocol": "noncollaborative",
            "d": 0.5,
            "disturbance": "zero",
            "t_end": 10.0
        }"#,
    )
    .unwrap();
    let out = run(bin().args(["simulate", "--manifest"]).arg(&manifest).arg("--out").arg(dir.path()));
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("minimum-phase"));
}

#[test]
fn malformed_manifest_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("bad.json");
    std::fs::write(&manifest, r#"{"name": "bad", "protocol": "noncollaborative"}"#).unwrap();
    let out = run(bin().args(["design", "--manifest"]).arg(&manifest).arg("--out").arg(dir.path()));
    assert_eq!(code(&out), 2);
    let out = run(bin().args(["design", "--manifest"]).arg(dir.path().join("absent.json")));
    assert_eq!(code(&out), 2);
}

#[test]
fn overrides_and_environment_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .env("COHSYNC_OUT", dir.path())
        .args(["simulate", "--manifest"])
        .arg(bundled("col-vicsek-n5"))
        .args(["--t-end", "1", "--dt", "0.01", "--seed", "7"]));
    // One second is too short to settle within the trailing window check.
    assert!(matches!(code(&out), 0 | 1));
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("col-vicsek-n5/summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["t_end"], 1.0);
    assert_eq!(summary["dt"], 0.01);
    let csv = std::fs::read_to_string(dir.path().join("col-vicsek-n5/trajectory.csv")).unwrap();
    // 100 steps at stride 10 plus the initial sample, five agents each.
    assert_eq!(csv.lines().count(), 1 + 11 * 5);
}

#[test]
fn graph_and_design_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args(["graph", "--manifest"]).arg(bundled("noncol-vicsek-n121")).arg("--out").arg(dir.path()));
    assert_eq!(code(&out), 0);
    let graph: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("noncol-vicsek-n121/graph.json")).unwrap())
            .unwrap();
    assert_eq!(graph["nodes"], 121);
    // A directed tree on 121 nodes.
    assert_eq!(graph["edges"].as_array().unwrap().len(), 120);

    let out = run(bin().args(["design", "--manifest"]).arg(bundled("noncol-vicsek-n5")).arg("--out").arg(dir.path()));
    assert_eq!(code(&out), 0);
    let design: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("noncol-vicsek-n5/design.json")).unwrap())
            .unwrap();
    let p = &design["noncollaborative"]["p"];
    assert!((p[0][0].as_f64().unwrap() - 3.0498).abs() < 1e-3);
    assert_eq!(design["d"], 0.5);
}

#[test]
fn verification_suite_report() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = run(bin().args(["verify", "--seed", "0", "--out"]).arg(dir.path()));
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("verify/report.txt")).unwrap();
    assert_eq!(read(&a), read(&b));

    let c = tempfile::tempdir().unwrap();
    let out = run(bin().args(["verify", "--corrupt-p", "0.1", "--out"]).arg(c.path()));
    assert_eq!(code(&out), 1);
    let report = String::from_utf8(read(&c)).unwrap();
    let block = report.split("[care-residual]").nth(1).unwrap();
    let result = block.lines().find(|l| l.starts_with("result")).unwrap();
    assert!(result.contains("FAIL"), "{result}");
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rare_cli::experiment::ExperimentConfig;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn rare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rare")).args(args).output().expect("binary runs")
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
        .display()
        .to_string()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&o.stderr)))
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

const SMALL_MC: &[&str] = &["--paths", "120", "--horizon", "200", "--t-star", "50", "--burn-in", "20"];

#[test]
fn demo_writes_every_artifact_with_its_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = rare(&["demo", "--out", path_str(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("weakly detectable true"));
    assert!(stdout.contains("trace 4.236068"));
    assert!(stdout.contains("depth 6"));

    let summary = read_json(dir.path().join("summary.json"));
    assert_eq!(summary["command"], "demo");
    let listed: Vec<String> = summary["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| {
            let name = a["file"].as_str().unwrap();
            let bytes = fs::read(dir.path().join(name)).unwrap();
            assert_eq!(a["sha256"], hex::encode(Sha256::digest(&bytes)), "{name}");
            assert_eq!(a["bytes"], bytes.len());
            name.to_string()
        })
        .collect();
    let mut on_disk = files(dir.path());
    on_disk.retain(|f| f != "summary.json");
    assert_eq!(listed, on_disk);
    for f in ["analysis.json", "fixed_points.json", "support.json", "support_points.csv", "samples.csv", "montecarlo.json"] {
        assert!(listed.iter().any(|l| l == f), "missing {f}");
    }
    let mc = read_json(dir.path().join("montecarlo.json"));
    assert_eq!(mc["paths"], 500);
}

#[test]
fn same_config_and_seed_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("sys2d.json");
    let mut args_a = vec!["montecarlo", "--config", &cfg, "--seed", "9", "--trajectories", "--out", path_str(a.path())];
    args_a.extend_from_slice(SMALL_MC);
    let mut args_b = vec!["montecarlo", "--config", &cfg, "--seed", "9", "--trajectories", "--threads", "1"];
    args_b.extend_from_slice(&["--out", path_str(b.path())]);
    args_b.extend_from_slice(SMALL_MC);
    assert!(rare(&args_a).status.success());
    assert!(rare(&args_b).status.success());
    assert_eq!(files(a.path()), files(b.path()));
    for f in files(a.path()) {
        assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap(), "{f} differs");
    }
    // one row per (ensemble, path, t) plus the header
    let traj = fs::read_to_string(a.path().join("trajectories.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 2 * 120 * 201);

    let c = tempfile::tempdir().unwrap();
    let mut args_c = vec!["montecarlo", "--config", &cfg, "--seed", "10", "--out", path_str(c.path())];
    args_c.extend_from_slice(SMALL_MC);
    assert!(rare(&args_c).status.success());
    assert_ne!(
        fs::read(a.path().join("samples.csv")).unwrap(),
        fs::read(c.path().join("samples.csv")).unwrap()
    );
}

#[test]
fn resolved_config_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    let out = rare(&["support", "--config", &config("sys1d.json"), "--depth", "4", "--out", path_str(a.path())]);
    assert!(out.status.success());
    let resolved_path = a.path().join("resolved_config.json");
    let resolved = ExperimentConfig::load(&resolved_path).unwrap();
    assert_eq!(resolved.support.depth, 4);
    assert_eq!(resolved.support.anchor, Some(vec![1]));
    assert_eq!(resolved.montecarlo.seeds, Some(vec![0, 1]));
    assert_eq!(ExperimentConfig::from_json_str(&resolved.to_json_pretty(), "mem").unwrap(), resolved);

    let b = tempfile::tempdir().unwrap();
    let resolved_arg = a.path().join("resolved_config.json").display().to_string();
    assert!(rare(&["support", "--config", &resolved_arg, "--out", path_str(b.path())]).status.success());
    for f in files(a.path()) {
        assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap(), "{f} differs");
    }
}

#[test]
fn refuses_non_empty_output_without_force() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("keep.txt"), "x").unwrap();
    let out = rare(&["analyze", "--config", &config("sys1d.json"), "--out", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["error"]["message"].as_str().unwrap().contains("not empty"));
    assert_eq!(files(dir.path()), ["keep.txt"]);

    let out = rare(&["analyze", "--config", &config("sys1d.json"), "--out", path_str(dir.path()), "--force"]);
    assert!(out.status.success());
    assert_eq!(files(dir.path()), ["analysis.json", "keep.txt", "resolved_config.json", "summary.json"]);
}

#[test]
fn exit_codes() {
    let out = rare(&["analyze"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "config");

    let out = rare(&["analyze", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));

    let out = rare(&["fixed-points", "--config", &config("sys2d_no_joint.json")]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"]["kind"], "precondition");

    let out = rare(&["fixed-points", "--config", &config("sys1d.json"), "--max-iter", "2"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"]["kind"], "numeric");

    let out = rare(&["support", "--config", &config("sys2d.json"), "--anchor", "2"]);
    assert_eq!(out.status.code(), Some(4));

    let out = rare(&["montecarlo", "--config", &config("sys1d.json"), "--functional", "median"]);
    assert_eq!(out.status.code(), Some(2));

    assert_eq!(rare(&["--help"]).status.code(), Some(0));
}

#[test]
fn schema_violations_are_all_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{
            "network": {"A": [[2.0]], "Q": [[1.0]], "P0": [[1.0]], "sensors": [{"C": [[1.0]], "R": [[-1.0]]}]},
            "schedule": [{"sensors": [], "prob": 0.5}, {"sensors": [1], "prob": 0.4}],
            "montecarlo": {"paths": 0, "tail": 0.1},
            "colour": "blue"
        }"#,
    )
    .unwrap();
    let out = rare(&["analyze", "--config", path_str(&path)]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    let pointers: Vec<&str> = err["error"]["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["pointer"].as_str().unwrap())
        .collect();
    for want in ["/network/sensors/0/R", "/schedule", "/montecarlo/tail", "/colour", "/montecarlo/paths"] {
        assert!(pointers.contains(&want), "missing {want} in {pointers:?}");
    }
}

#[test]
fn overrides_are_validated() {
    let out = rare(&["montecarlo", "--config", &config("sys1d.json"), "--horizon", "10", "--t-star", "6"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["violations"][0]["pointer"], "/montecarlo/burn_in");
    assert_eq!(err["error"]["violations"][1]["pointer"], "/montecarlo/t_star");
}

#[test]
fn analyze_prints_the_report() {
    let out = rare(&["analyze", "--config", &config("sys2d_no_joint.json")]);
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["weakly_detectable"], false);
    assert_eq!(report["detectable_set"], serde_json::json!([]));
    assert_eq!(report["atoms"].as_array().unwrap().len(), 3);
    assert_eq!(report["assumption_e1"]["spectral_radius"], 3.0);
}

#[test]
fn fixed_points_report_each_atom() {
    let out = rare(&["fixed-points", "--config", &config("sys2d.json")]);
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let atoms = report["atoms"].as_array().unwrap();
    assert_eq!(atoms.len(), 3);
    let joint = atoms.iter().find(|a| a["subset"] == serde_json::json!([1, 2])).unwrap();
    assert_eq!(joint["detectable"], true);
    // decoupled modes: P* = diag(2 + sqrt 5, (9 + sqrt 85) / 2)
    let v = &joint["fixed_point"]["value"];
    assert!((v[0][0].as_f64().unwrap() - (2.0 + 5f64.sqrt())).abs() < 1e-9);
    assert!((v[1][1].as_f64().unwrap() - (9.0 + 85f64.sqrt()) / 2.0).abs() < 1e-9);
    assert!(atoms.iter().filter(|a| a["detectable"] == false).all(|a| a.get("fixed_point").is_none()));
}

#[test]
fn support_csv_holds_the_scalar_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = rare(&["support", "--config", &config("sys1d.json"), "--depth", "2", "--out", path_str(dir.path())]);
    assert!(out.status.success());
    let mut reader = csv::Reader::from_path(dir.path().join("support_points.csv")).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["index", "depth", "word", "p1_1"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    let mut got: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    got.sort_by(f64::total_cmp);
    let p = 2.0 + 5f64.sqrt();
    let f0 = |x: f64| 4.0 * x + 1.0;
    let f1 = |x: f64| (5.0 * x + 1.0) / (x + 1.0);
    let mut want = [p, f0(p), f0(f0(p)), f1(f0(p))];
    want.sort_by(f64::total_cmp);
    assert_eq!(got.len(), 4);
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-9, "{g} vs {w}");
    }
    assert_eq!(&rows[0][2], "");
    let summary = read_json(dir.path().join("support.json"));
    assert_eq!(summary["counts_per_depth"], serde_json::json!([1, 1, 2]));

    let full = rare(&["support", "--config", &config("sys1d.json"), "--depth", "2", "--full-alphabet"]);
    assert!(full.status.success());
}

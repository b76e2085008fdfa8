use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rsmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsmpc")).args(args).output().expect("binary runs")
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

/// The inner-start benchmark with a small sweep, written next to `dir`.
fn small_sweep_config(dir: &Path) -> PathBuf {
    let base = std::fs::read_to_string(config("second_order_inner.toml")).unwrap();
    let model = base.split("[experiment]").next().unwrap();
    let text = format!(
        "{model}[experiment]\nalphas = [0.5, 1.0]\nhorizon = 4\nsteps = 4\nruns = 6\nseed = 3\nx0 = [1.8, 0.3]\nsnapshots = [3]\n"
    );
    let path = dir.join("small.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn design_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("design.json");
    let cfg = config("second_order.toml");
    let out = rsmpc(&["design", "-c", path_str(&cfg), "-e", "cvar:0.5", "-o", path_str(&design)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&design).unwrap()).unwrap();
    assert_eq!(file["envelope"]["kind"], "cvar");
    assert_eq!(file["vertices"].as_array().unwrap().len(), 4);
    assert_eq!(file["margins"]["pass"], true);

    let out = rsmpc(&["verify", "-c", path_str(&cfg), "-d", path_str(&design)]);
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["pass"], true);

    // Inflating the gain breaks the conditions.
    let mut tampered = file.clone();
    tampered["F"] = serde_json::json!([[50.0, 50.0]]);
    std::fs::write(&design, tampered.to_string()).unwrap();
    let out = rsmpc(&["verify", "-c", path_str(&cfg), "-d", path_str(&design)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_json(&out)["pass"], false);
}

#[test]
fn design_defaults_to_first_configured_envelope() {
    let out = rsmpc(&["design", "-c", path_str(&config("second_order.toml"))]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["envelope"]["alpha"], 0.001);
    assert_eq!(v["vertices"].as_array().unwrap().len(), 3);
}

#[test]
fn unstabilizable_model_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "nx = 1\nnu = 1\nL = 1\nA = [[[2.0]]]\nB = [[[0.0]]]\np = [1.0]\nQ = [[1.0]]\nR = [[1.0]]\n\
         Tx = [[1.0]]\nx_max = 1.0\nTu = [[1.0]]\nu_max = 1.0\n",
    )
    .unwrap();
    let out = rsmpc(&["design", "-c", path_str(&path), "-e", "expectation"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
}

#[test]
fn bad_input_exits_with_one() {
    let out = rsmpc(&["design", "-c", "/nonexistent/model.toml", "-e", "expectation"]);
    assert_eq!(out.status.code(), Some(1));
    let out = rsmpc(&["design", "-c", path_str(&config("second_order.toml")), "-e", "cvar:7"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("second_order_inner.toml");
    let out = rsmpc(&[
        "run", "-c", path_str(&cfg), "-e", "cvar:0.5", "--steps", "5", "--seed", "9", "-o", path_str(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["steps"], 5);
    assert_eq!(summary["violations"], 0);
    assert!(summary["aborted"].is_null());

    let mut rdr = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 2 + 2 + 1 + 4);
    assert_eq!(rdr.records().count(), 5);
    assert!(dir.path().join("trajectory.json").exists());
}

#[test]
fn run_from_outside_the_feasible_region_fails() {
    let out = rsmpc(&["run", "-c", path_str(&config("second_order.toml")), "-e", "cvar:0.5", "--steps", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
}

#[test]
fn sweep_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_sweep_config(dir.path());
    let outs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for (out_dir, jobs) in outs.iter().zip(["1", "3"]) {
        let out = rsmpc(&["sweep", "-c", path_str(&cfg), "-o", path_str(out_dir), "-j", jobs]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["cdf_0.5_3.csv", "cdf_1_3.csv", "summary.json"] {
        let a = std::fs::read(outs[0].join(name)).unwrap();
        assert_eq!(a, std::fs::read(outs[1].join(name)).unwrap(), "{name}");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(outs[0].join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["envelopes"].as_array().unwrap().len(), 2);
    assert_eq!(summary["envelopes"][0]["feasibility_rate"], 1.0);

    let reseeded = dir.path().join("c");
    let out = rsmpc(&["sweep", "-c", path_str(&cfg), "-o", path_str(&reseeded), "--seed", "4", "--per-run"]);
    assert!(out.status.success());
    assert!(reseeded.join("runs_0.5.csv").exists());
    assert_ne!(std::fs::read(outs[0].join("cdf_0.5_3.csv")).unwrap(), std::fs::read(reseeded.join("cdf_0.5_3.csv")).unwrap());
}

#[test]
fn sweep_records_infeasible_start() {
    let dir = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(small_sweep_config(dir.path())).unwrap();
    let path = dir.path().join("far.toml");
    std::fs::write(&path, base.replace("x0 = [1.8, 0.3]", "x0 = [6.0, 1.0]")).unwrap();
    let out = rsmpc(&["sweep", "-c", path_str(&path), "-o", path_str(&dir.path().join("r"))]);
    assert!(out.status.success());
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("r/summary.json")).unwrap()).unwrap();
    for env in summary["envelopes"].as_array().unwrap() {
        assert_eq!(env["feasibility_rate"], 0.0);
        assert!(env["error"].as_str().unwrap().starts_with("initial state"));
    }
}

#[test]
fn bench_reports_node_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scaling.toml");
    std::fs::write(&cfg, "[scaling]\nbranches = 2\nnx = 2\nnu = 1\nalpha = 0.5\nsteps = 2\nruns = 1\n").unwrap();
    let out = rsmpc(&["bench", "-c", path_str(&cfg), "--horizons", "1,3", "-o", path_str(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("scaling.csv")).unwrap();
    let nodes: Vec<String> = rdr.records().map(|r| r.unwrap()[1].to_string()).collect();
    assert_eq!(nodes, vec!["1", "7"]);
}

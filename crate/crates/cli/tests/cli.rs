use serde_json::Value;
use std::path::PathBuf;
use std::process::{Command, Output};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn magzoll(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magzoll")).args(args).env_remove("MAGZOLL_JOBS").output().unwrap()
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

#[test]
fn zoll_check_on_the_constant_torus() {
    let cfg = configs().join("torus_const.json");
    let out = magzoll(&["zoll-check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["result"]["is_zoll"], true);
    let p = r["result"]["common_period"].as_f64().unwrap();
    assert!((p - std::f64::consts::TAU).abs() < 1e-6);
    assert_eq!(r["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(r["config"]["surface"]["kind"], "flat_torus");
}

#[test]
fn zoll_check_exits_two_on_a_witness() {
    let cfg = configs().join("torus_nonzoll.json");
    let out = magzoll(&["zoll-check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(report(&out)["result"]["is_zoll"], false);
}

#[test]
fn drift_row_at_lambda_ten() {
    let dir = tempfile::tempdir().unwrap();
    let out = magzoll(&["drift", "--set", "lambda=10", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("drift.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("lambda,measured_dx,bound_2delta,ratio"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 10.0);
    assert!((row[2] - 0.0091161).abs() < 1e-6, "{row:?}");
    // guiding-centre value π/100; the finite-λ correction is about 2%
    assert!((row[1] / 0.0314159 - 1.0).abs() < 0.03, "{row:?}");
    assert!(row[1] >= row[2]);
}

#[test]
fn diagnostics_on_genus_two() {
    let cfg = configs().join("genus2_const.json");
    let out = magzoll(&["diagnostics", "--config", cfg.to_str().unwrap(), "--set", "lambda=1"]);
    assert_eq!(out.status.code(), Some(0));
    let r = &report(&out)["result"]["report"];
    assert_eq!(r["helicity"].as_f64().unwrap(), 0.0);
    assert!((r["lambda_zero"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn errors_exit_one_with_context() {
    let out = magzoll(&["simulate", "--set", "lamda=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"lambda\": 1,\n  \"zol\": {}\n}\n").unwrap();
    let out = magzoll(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("zol") && err.contains("line 3"), "{err}");

    let out = magzoll(&["simulate", "--set", "surface.radius=-1", "--set", "surface.kind=round_sphere"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = configs().join("torus_const.json");
    let run = |dir: &std::path::Path, jobs: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_magzoll"))
            .args(["dichotomy", "--config", cfg.to_str().unwrap(), "--set", "lambda=3", "--svg", "--seed", "5"])
            .args(["--out", dir.to_str().unwrap(), "--jobs", jobs])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        out.stdout
    };
    let sa = run(a.path(), "1");
    let sb = run(b.path(), "4");
    assert_eq!(sa, sb);
    for name in ["dichotomy.json", "dichotomy.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn simulate_writes_trajectory_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = magzoll(&["simulate", "--set", "simulate.t_end=3", "--svg", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.lines().count() > 10);
    let svg = std::fs::read_to_string(dir.path().join("trajectory.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("simulate.json")).unwrap()).unwrap();
    assert_eq!(saved, report(&out));
    assert_eq!(saved["config"]["simulate"]["t_end"], 3.0);
}

#[test]
fn waist_then_reload_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = magzoll(&["waist", "--set", "lambda=0", "--set", "waist.points=32", "--out", d]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["result"]["status"], "converged");
    assert!((r["result"]["length"].as_f64().unwrap() - 1.0).abs() < 1e-8);
    let path = dir.path().join("waist_loop.json");
    let seed = format!("waist.seed_loop={{\"kind\":\"file\",\"path\":{:?}}}", path.to_str().unwrap());
    let out = magzoll(&["waist", "--set", "lambda=0", "--set", &seed]);
    assert_eq!(out.status.code(), Some(0));
    assert!(report(&out)["result"]["iterations"].as_u64().unwrap() <= 2);
}

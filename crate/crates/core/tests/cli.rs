use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use birkhoff_ps::cli::{RunManifest, SolutionFile};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_birkhoff-ps"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn nodes_on_the_unit_interval() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["nodes", "--kind", "cgl", "--n", "2", "--t0", "0", "--tf", "1", "--out", "nodes.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("nodes.csv")).unwrap();
    let v: Vec<f64> = text.lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(v, [0.0, 0.5, 1.0]);
    // 17 significant digits: one leading digit, sixteen after the point.
    assert!(text.lines().all(|l| l.split('e').next().unwrap().len() == 18));
    let m = manifest(&dir.path().join("nodes.nodes.manifest.json"));
    assert_eq!(m.subcommand, "nodes");
    assert_eq!(m.exit_code, 0);
    for p in &m.outputs {
        assert!(dir.path().join(p).exists());
    }
}

#[test]
fn check_reports_theorem1() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["check", "--kind", "cgl", "--n", "64"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let line = text.lines().find(|l| l.contains("theorem1-a")).unwrap();
    assert!(line.starts_with("PASS"));
    let value: f64 = line.split_whitespace().nth(5).unwrap().parse().unwrap();
    assert!(value <= 1e-10);
}

#[test]
fn failing_checks_exit_one_and_are_named() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["check", "--kind", "uniform", "--n", "128"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("FAIL proposition2 uniform N=128"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    for args in [
        &["nodes", "--n", "4", "--frobnicate"][..],
        &["interpolate"],
        &["nodes", "--kind", "hermite", "--n", "4"],
        &["cond", "--mats", "innerd", "--ns", "8,16"],
    ] {
        let out = run(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn cond_slopes_for_the_birkhoff_constraint_matrix() {
    let dir = TempDir::new().unwrap();
    let out = run(
        dir.path(),
        &["cond", "--grids", "cgl", "--mats", "cbirk", "--nmin", "16", "--nmax", "1024", "--out", "cond.csv"],
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("cond.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "grid,matrix,N,kappa");
    assert_eq!(csv.lines().count(), 8);
    let slopes: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("cond.slopes.json")).unwrap()).unwrap();
    let s = slopes["fits"][0]["slope"].as_f64().unwrap();
    assert!((-0.1..=0.1).contains(&s), "slope {s}");
}

#[test]
fn matrices_are_written_row_major() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(dir.path(), &["diffmat", "--kind", "cgl", "--n", "1", "--out", "D.csv"]).status.code(), Some(0));
    let d = fs::read_to_string(dir.path().join("D.csv")).unwrap();
    let rows: Vec<Vec<f64>> = d.lines().map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows, vec![vec![-0.5, 0.5], vec![-0.5, 0.5]]);
    let out = run(dir.path(), &["birkmat", "--kind", "lgl", "--n", "16", "--case", "b", "--out", "Bb.csv", "--check-theorem1"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stderr).unwrap().contains("theorem1 residual"));
    let b = fs::read_to_string(dir.path().join("Bb.csv")).unwrap();
    assert_eq!(b.lines().count(), 16);
    assert!(b.lines().all(|l| l.split(',').count() == 16));
}

#[test]
fn solve_then_propagate() {
    let dir = TempDir::new().unwrap();
    let out = run(
        dir.path(),
        &["solve", "--problem", "double-integrator", "--n", "16", "--method", "lagrange", "--out", "di.json"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let sol: SolutionFile = serde_json::from_str(&fs::read_to_string(dir.path().join("di.json")).unwrap()).unwrap();
    assert!((sol.trajectory.tf - 2.0).abs() < 0.02);
    assert_eq!(sol.trajectory.x.len(), 17);
    let out = run(dir.path(), &["propagate", "--solution", "di.json", "--rtol", "1e-10", "--out", "err.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("err.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "t,x0_ps,x0_propagated,x0_error,x1_ps,x1_propagated,x1_error");
    assert_eq!(csv.lines().count(), 1 + 170);
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[3], v[2] - v[1]);
    }
    let m = manifest(&dir.path().join("err.propagate.manifest.json"));
    assert!(m.metrics["terminal_miss"].as_f64().unwrap() < 1e-6);
    assert!(dir.path().join("di.solve.manifest.json").exists());
}

#[test]
fn solver_flags_override_the_options_file() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("opts.json"), r#"{"max_iter": 1000, "tol_opt": 1e-5}"#).unwrap();
    let out = run(
        dir.path(),
        &["solve", "--problem", "oxfer", "--n", "16", "--options", "opts.json", "--max-iter", "3", "--out", "ox.json"],
    );
    assert_eq!(out.status.code(), Some(1));
    let m = manifest(&dir.path().join("ox.solve.manifest.json"));
    assert_eq!(m.metrics["status"], "max-iter");
    assert!(m.metrics["iterations"].as_u64().unwrap() <= 3);
}

#[test]
fn refine_writes_solution_and_diagnostics() {
    let dir = TempDir::new().unwrap();
    let out = run(
        dir.path(),
        &[
            "refine", "--problem", "regulator", "--ladder", "4,8,16,32", "--eps-tail", "1e-4", "--out", "reg.json", "--diag",
            "reg.diag.json",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let diag: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("reg.diag.json")).unwrap()).unwrap();
    assert_eq!(diag["outcome"], "converged");
    assert_eq!(diag["rungs"].as_array().unwrap().len(), 3);
    let sol: SolutionFile = serde_json::from_str(&fs::read_to_string(dir.path().join("reg.json")).unwrap()).unwrap();
    assert_eq!(sol.trajectory.grid.order(), 16);
}

#[test]
fn manifests_reproduce_their_outputs() {
    let dir = TempDir::new().unwrap();
    let args = ["cond", "--grids", "cgl,lgl", "--mats", "innerd,abirk", "--ns", "8,12,16,24", "--out", "c.csv"];
    assert_eq!(run(dir.path(), &args).status.code(), Some(0));
    let first = fs::read(dir.path().join("c.csv")).unwrap();
    let slopes = fs::read(dir.path().join("c.slopes.json")).unwrap();
    let m = manifest(&dir.path().join("c.cond.manifest.json"));
    fs::remove_file(dir.path().join("c.csv")).unwrap();
    let argv: Vec<&str> = m.argv[1..].iter().map(String::as_str).collect();
    assert_eq!(run(dir.path(), &argv).status.code(), Some(0));
    assert_eq!(fs::read(dir.path().join("c.csv")).unwrap(), first);
    assert_eq!(fs::read(dir.path().join("c.slopes.json")).unwrap(), slopes);
}

#[test]
fn thread_override() {
    let dir = TempDir::new().unwrap();
    let args = ["cond", "--mats", "innerd", "--ns", "8,16,32,64", "--out", "c.csv"];
    let ok = bin().current_dir(dir.path()).env("BPS_THREADS", "2").args(args).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let bad = bin().current_dir(dir.path()).env("BPS_THREADS", "many").args(args).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

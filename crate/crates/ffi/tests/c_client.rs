//! Compiles a small C program against the generated header and the static
//! library, then runs it. Skipped when no C compiler is on PATH.

use std::path::{Path, PathBuf};
use std::process::Command;

const CLIENT: &str = r#"
#include <stdio.h>
#include <string.h>
#include "birkhoff_ps.h"

int main(void) {
    BpsGrid *g = NULL;
    if (bps_grid_new(BPS_GRID_CGL, 16, &g) != BPS_OK) return 10;
    double nodes[17];
    if (bps_grid_nodes(g, nodes, 17) != BPS_OK) return 11;
    if (nodes[0] != -1.0 || nodes[16] != 1.0) return 12;
    if (bps_grid_nodes(g, nodes, 3) != BPS_BUFFER_TOO_SMALL) return 13;
    if (strlen(bps_last_error()) == 0) return 14;
    double r = 1.0;
    if (bps_theorem1_residual(g, BPS_CASE_A, &r) != BPS_OK || r > 1e-12) return 15;
    bps_grid_free(g);

    BpsProblem *p = NULL;
    if (bps_problem_from_json("{\"problem\": \"double-integrator\"}", &p) != BPS_OK) return 20;
    BpsSolution *s = NULL;
    if (bps_solve(p, BPS_GRID_CGL, 16, BPS_METHOD_BIRKHOFF_A, NULL, &s) != BPS_OK) return 21;
    int status = -1;
    bps_solution_status(s, &status);
    double tf, obj, feas;
    size_t iters;
    bps_solution_summary(s, &tf, &obj, &feas, &iters);
    printf("status %d tf %.7f\n", status, tf);
    if (status != BPS_SOLVE_OPTIMAL || tf < 2.0 || tf > 2.02) return 22;
    bps_solution_free(s);
    bps_problem_free(p);
    return 0;
}
"#;

fn compiler() -> Option<String> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .map(String::from)
}

fn artifact_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let lib = artifact_dir().join("libbirkhoff_ps_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built, skipping", lib.display());
        return;
    }
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    let bin = dir.path().join("client");
    std::fs::write(&src, CLIENT).unwrap();
    let out = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .output()
        .unwrap();
    assert!(out.status.success(), "compile failed:\n{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "client exited with {:?}: {stdout}", run.status.code());
    assert!(stdout.starts_with("status 0 tf 2.01"));
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/birkhoff_ps.h")).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exported: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exported.len() > 15);
    for name in exported {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

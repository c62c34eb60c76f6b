//! Exit-code and artifact contracts of the command-line front end.

use std::path::Path;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_risk-hjb")
}

const MERTON: &str = r#"
[model]
family = "constant"
a0 = [0.10]
b0 = [0.0]
sigma = [[0.2, 0.0]]
lambda = [[0.0, 0.3]]
r0 = 0.03

[grid]
lower = [-1.0]
upper = [1.0]
points = [51]

[solver]
dt = 0.002

[simulation]
dt = 0.01
n_paths = 500
seed = 3
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin()).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).to_string(),
        String::from_utf8_lossy(&out.stderr).to_string(),
    )
}

#[test]
fn check_passes_on_constant_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MERTON);
    let out = dir.path().join("out");
    let (code, stdout, _) = run(&[
        "check",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{stdout}");
    assert!(out.join("assumptions.json").exists());
}

#[test]
fn check_fails_with_exit_3_on_degenerate_diffusion() {
    let dir = tempfile::tempdir().unwrap();
    let degenerate = MERTON.replace("lambda = [[0.0, 0.3]]", "lambda = [[0.0, 0.0]]");
    let cfg = write_config(dir.path(), &degenerate);
    let (code, _, stderr) = run(&[
        "check",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "{stderr}");
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    // unknown key
    let bad = format!("{MERTON}\n[solver2]\nx = 1\n");
    let cfg = write_config(dir.path(), &bad);
    let (code, _, stderr) = run(&["check", cfg.to_str().unwrap()]);
    assert_eq!(code, 1, "{stderr}");
    assert!(stderr.contains("solver2"));
    // missing file
    let (code, _, _) = run(&["check", dir.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(code, 1);
}

#[test]
fn oracle_mismatch_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let nonlinear = MERTON.replace("family = \"constant\"", "family = \"bounded_nonlinear\"")
        + "\n";
    let nonlinear = nonlinear.replace(
        "r0 = 0.03",
        "r0 = 0.03\na_mat = [[0.05]]\nb_mat = [[-1.0]]\nscale = 2.0",
    );
    let cfg = write_config(dir.path(), &nonlinear);
    let (code, _, stderr) = run(&[
        "oracle-compare",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 1, "{stderr}");
    assert!(stderr.contains("oracle"), "{stderr}");
}

#[test]
fn solve_t0_writes_zero_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MERTON);
    let out = dir.path().join("out");
    let (code, _, _) = run(&[
        "solve",
        cfg.to_str().unwrap(),
        "--mode",
        "finite",
        "--set",
        "solver.horizon=0.0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(out.join("u.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 52); // header + 51 nodes, single time slice
    assert!(lines[1..].iter().all(|l| l.ends_with(",0")));
}

#[test]
fn evaluate_zero_strategy_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MERTON);
    let out = dir.path().join("out");
    let (code, _, _) = run(&[
        "evaluate",
        cfg.to_str().unwrap(),
        "--set",
        "simulation.strategy=zero",
        "--set",
        "simulation.v0=2.0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(out.join("evaluate.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    let value = json["estimate"]["value"].as_f64().unwrap();
    assert!((value - (2.0f64.ln() + 0.03)).abs() < 1e-12);
}

#[test]
fn bad_solve_mode_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MERTON);
    let (code, _, _) = run(&["solve", cfg.to_str().unwrap(), "--mode", "sideways"]);
    assert_eq!(code, 1);
}

#[test]
fn ergodic_divergence_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MERTON);
    let (code, _, stderr) = run(&[
        "solve",
        cfg.to_str().unwrap(),
        "--mode",
        "ergodic",
        "--set",
        "solver.max_horizon=2.0",
        "--set",
        "solver.tol_u=1e-300",
        "--set",
        "solver.tol_rho=1e-300",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("diverged"), "{stderr}");
}

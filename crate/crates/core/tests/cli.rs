use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const RUN: &str = r#"seed = 5

[system]
kind = "linear"
a = [[0.0, 1.0], [-1.0, -0.5]]
b = [[0.0], [1.0]]

[simulation]
n_sim = 6
t_final = 2.0

[dfsm]
n_samples = 60
kmeans_restarts = 2

[ocp]
problem = "problem.toml"
"#;

const PROBLEM: &str = r#"tf = 2.0
n_t = 21
x0 = [1.0, 0.0]

[objective]
control_weights = { u0 = 1.0 }

[bounds.controls]
u0 = [-3.0, 3.0]

[bounds.terminal]
x0 = [0.0, 0.0]
x1 = [0.0, 0.0]
"#;

fn dfsm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfsm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = dfsm(dir, args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), RUN).unwrap();
    fs::write(dir.path().join("problem.toml"), PROBLEM).unwrap();
    dir
}

fn pipeline(dir: &Path) {
    for cmd in ["generate", "build", "validate", "solve"] {
        ok(dir, &[cmd, "--config", "run.toml"]);
    }
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_is_deterministic_and_complete() {
    let a = workspace();
    let b = workspace();
    pipeline(a.path());
    pipeline(b.path());

    let out_a = a.path().join("out");
    let listed = files(&out_a);
    for expected in [
        "config.toml",
        "split.json",
        "trajectories/manifest.json",
        "trajectories/traj_0005.csv",
        "model/manifest.json",
        "validation/rmse_pooled.csv",
        "validation/summary.json",
        "validation/eigenvalues.csv",
        "solution/trajectory.csv",
        "solution/summary.json",
        "solution/problem.toml",
    ] {
        assert!(listed.contains(&PathBuf::from(expected)), "missing {expected}");
    }
    assert_eq!(listed, files(&b.path().join("out")));

    // everything except wall-clock timings is byte-identical
    for f in listed.iter().filter(|f| !f.to_string_lossy().contains("timings")) {
        let x = fs::read(out_a.join(f)).unwrap();
        let y = fs::read(b.path().join("out").join(f)).unwrap();
        assert!(x == y, "{} differs between runs", f.display());
    }

    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out_a.join("solution/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], true);
}

#[test]
fn effective_config_is_written_with_overrides() {
    let dir = workspace();
    ok(
        dir.path(),
        &[
            "generate",
            "--config",
            "run.toml",
            "--seed-override",
            "9",
            "--out",
            "alt",
        ],
    );
    let text = fs::read_to_string(dir.path().join("alt/config.toml")).unwrap();
    let cfg: toml::Value = toml::from_str(&text).unwrap();
    assert_eq!(cfg["seed"].as_integer(), Some(9));
    assert_eq!(cfg["dfsm"]["seed"].as_integer(), Some(9));
    assert_eq!(cfg["simulation"]["n_sim"].as_integer(), Some(6));
}

#[test]
fn bad_configuration_exits_with_error() {
    let dir = workspace();
    fs::write(dir.path().join("bad.toml"), "bogus = 1\n").unwrap();
    let out = dfsm(dir.path(), &["generate", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let out = dfsm(dir.path(), &["build", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(1));

    // building before generating has no data to read
    let out = dfsm(dir.path(), &["build", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unconverged_solve_exits_with_two() {
    let dir = workspace();
    ok(dir.path(), &["generate", "--config", "run.toml"]);
    ok(dir.path(), &["build", "--config", "run.toml"]);
    let capped = format!("{PROBLEM}\n[solver]\nmax_outer = 1\nmax_inner = 2\n");
    fs::write(dir.path().join("capped.toml"), capped).unwrap();
    let out = dfsm(
        dir.path(),
        &["solve", "--config", "run.toml", "--problem", "capped.toml"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/solution/trajectory.csv").is_file());
}

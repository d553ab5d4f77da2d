use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[model]
p = 2.0
q = 3.0
r = 6.0
s = 1.0
epsilon = 0.1
tau = 1.0
a = 0.5
b = 1.0
eta = 1.0

[grid]
lengths = 1.0
points = 16

[stochastic]
master_seed = 11
paths = 6
barrier_K = 2.0

[integrator]
scheme = "transform"
dt = 0.01

[run]
horizon = 0.5
gamma0 = 1.0
initial = { kind = "cosine", sup = 2.0 }
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn shadow_gm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shadow-gm")).args(args).output().unwrap()
}

fn run(dir: &Path, sub: &str, out: &str, extra: &[&str]) -> Output {
    let cfg = write_config(dir, SMALL);
    let out = dir.join(out);
    let mut args = vec![sub, "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    shadow_gm(&args)
}

#[test]
fn validate_reports_the_regime() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "validate", "v", &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("global_regime=true"), "{text}");
    assert!(text.contains("steps=50"), "{text}");
}

#[test]
fn configuration_errors_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &SMALL.replace("p = 2.0", "p = 0.5"));
    assert_eq!(shadow_gm(&["validate", "-c", bad.to_str().unwrap()]).status.code(), Some(4));

    let unknown = write_config(dir.path(), &SMALL.replace("[run]", "[run]\ncolour = 1"));
    assert_eq!(shadow_gm(&["ensemble", "-c", unknown.to_str().unwrap()]).status.code(), Some(4));

    let missing = dir.path().join("absent.toml");
    assert_eq!(shadow_gm(&["validate", "-c", missing.to_str().unwrap()]).status.code(), Some(4));

    let cfg = write_config(dir.path(), SMALL);
    let out = shadow_gm(&["validate", "-c", cfg.to_str().unwrap(), "--scheme", "ode"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn simulate_writes_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "simulate", "sim", &["--index", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sim/trajectory_2.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("t,gamma,mean_r,sup_A,h_delta,h_delta_integral,h_alpha_beta,v,lb_margin,lemma32_margin")
    );
    assert_eq!(lines.count(), 51);
}

#[test]
fn ensemble_files_do_not_depend_on_workers() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(dir.path(), "ensemble", "w1", &["--workers", "1"]);
    let b = run(dir.path(), "ensemble", "w3", &["--workers", "3"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    for file in ["ensemble.txt", "ensemble.json"] {
        let x = std::fs::read(dir.path().join("w1").join(file)).unwrap();
        let y = std::fs::read(dir.path().join("w3").join(file)).unwrap();
        assert_eq!(x, y, "{file}");
    }
}

#[test]
fn seed_flag_overrides_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(dir.path(), "ensemble", "a", &[]);
    let b = run(dir.path(), "ensemble", "b", &["--seed", "12"]);
    let a = String::from_utf8(a.stdout).unwrap();
    let b = String::from_utf8(b.stdout).unwrap();
    assert!(a.contains("master_seed=11"));
    assert!(b.contains("master_seed=12"));
    let ja = std::fs::read_to_string(dir.path().join("a/ensemble.json")).unwrap();
    let jb = std::fs::read_to_string(dir.path().join("b/ensemble.json")).unwrap();
    assert_ne!(ja.replace("\"master_seed\": 11", ""), jb.replace("\"master_seed\": 12", ""));
}

#[test]
fn verify_bounds_passes_in_the_global_regime() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "verify-bounds", "vb", &[]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("lower_bound_ok=true"));
    assert!(dir.path().join("vb/verify_bounds.json").exists());
}

#[test]
fn picard_check_and_convergence_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "picard-check", "pc", &["--paths", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("pc/picard_check.txt").exists());

    let out = run(dir.path(), "convergence", "cv", &["--levels", "3", "--scheme", "em"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("cv/convergence.txt")).unwrap();
    assert!(text.contains("scheme=em"));
    assert!(text.contains("level2_dt="));
}

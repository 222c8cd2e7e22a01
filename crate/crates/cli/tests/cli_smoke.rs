//! End-to-end checks of the binary: artifact layout, determinism of the
//! emitted CSVs, exit codes, and the subcommand surface.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_macrodyn"))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const CASE2: &str = r#"
[spec]
c_student = [1.0, 1.0, 1.0]
c_teacher = [1.0, -1.0, 1.0]
noise_sigma = 0.0
a_init = 5.0

[ode]
tau_max = 50.0
"#;

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("macrodyn-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn simulate_ode_writes_deterministic_artifacts() {
    let dir = tmpdir("ode");
    let cfg = write_config(&dir, CASE2);
    for sub in ["a", "b"] {
        let out = bin()
            .args([
                "simulate-ode",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                dir.join(sub).to_str().unwrap(),
                "--svg",
                "--overlay-manifold",
                "--threads",
                "1",
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in [
        "trajectory.csv",
        "trajectory.json",
        "trajectory.svg",
        "phase_plane.svg",
        "resolved-config.toml",
    ] {
        assert!(dir.join("a").join(name).exists(), "missing {name}");
    }
    let a = std::fs::read(dir.join("a/trajectory.csv")).unwrap();
    let b = std::fs::read(dir.join("b/trajectory.csv")).unwrap();
    assert_eq!(a, b, "single-threaded runs must be byte-identical");
    let head = String::from_utf8_lossy(&a);
    assert!(head.starts_with("tau,R,a,loss\n"));
    // resolved echo parses as a config again
    let echo = std::fs::read_to_string(dir.join("a/resolved-config.toml")).unwrap();
    assert!(echo.contains("tau_max = 50.0"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn missing_and_invalid_configs_exit_2() {
    let dir = tmpdir("cfg");
    let out = bin()
        .args(["simulate-ode", "--config", "/nonexistent.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let bad = write_config(&dir, "[spec]\nc_student = [1.0]\nc_teacher = [-1.0]\nnoise_sigma = 0.0\na_init = 1.0\n");
    let out = bin()
        .args(["simulate-ode", "--config", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn manifold_emits_roots_and_branch() {
    let dir = tmpdir("manifold");
    let cfg = write_config(&dir, CASE2);
    let out = bin()
        .args([
            "manifold",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join("m").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("m/manifold.json")).unwrap())
            .unwrap();
    assert_eq!(json["classification"], "Unlearning");
    let r_alpha = json["r_alpha"].as_f64().unwrap();
    assert!((r_alpha - 0.198148).abs() < 1e-3);
    let branch = std::fs::read_to_string(dir.join("m/branch.csv")).unwrap();
    assert!(branch.starts_with("R,h,alpha\n"));
    assert!(branch.lines().count() > 100);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn phase_map_small_grid() {
    let dir = tmpdir("phase");
    let cfg = write_config(
        &dir,
        &format!("{CASE2}\n[analysis]\nc_bar_threshold = 0.02\n"),
    );
    let out = bin()
        .args([
            "phase-map",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join("p").to_str().unwrap(),
            "--axis1",
            "cstar2:-2:-1:2",
            "--axis2",
            "a_init:5:8:2",
            "--tau-max",
            "2e3",
            "--svg",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("p/phase_map.csv")).unwrap();
    assert!(csv.starts_with("axis1,axis2,verdict,analytic,agree,peak_R,final_R\n"));
    assert_eq!(csv.lines().count(), 5);
    assert!(dir.join("p/phase_map.svg").exists());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("p/phase_map.json")).unwrap())
            .unwrap();
    assert_eq!(json["cells"], 4);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn scaling_reports_fits() {
    let dir = tmpdir("scaling");
    let cfg = write_config(&dir, CASE2);
    let out = bin()
        .args([
            "scaling",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join("s").to_str().unwrap(),
            "--tau-max",
            "1e6",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("s/scaling.json")).unwrap())
            .unwrap();
    let slope = json["fit_R"]["fitted_slope"].as_f64().unwrap();
    assert!((slope + 1.0 / 3.0).abs() < 0.05, "slope {slope}");
    assert!(json["handoff_tau"].as_f64().is_some());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn simulate_sgd_small_run_with_overlay() {
    let dir = tmpdir("sgd");
    let cfg = write_config(
        &dir,
        &format!(
            "{CASE2}\n[sgd]\nd = 50\nn = 60\nm = 8\ngamma = 1.0\nsteps = 20\nmeasure_every = 5\npair_sample = 10\nseed = 3\n"
        ),
    );
    let out = bin()
        .args([
            "simulate-sgd",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join("g").to_str().unwrap(),
            "--replicates",
            "2",
            "--overlay-ode",
            "--threads",
            "1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = std::fs::read_to_string(dir.join("g/sgd_run_seed3.csv")).unwrap();
    assert!(run.starts_with("tau,R,a,R_std,a_std,Q_bar\n"));
    assert!(dir.join("g/sgd_run_seed4.csv").exists());
    assert!(dir.join("g/ode_overlay.csv").exists());
    // steps=0 smoke: init-only measurement
    let cfg0 = write_config(
        &tmpdir("sgd0"),
        &format!(
            "{CASE2}\n[sgd]\nd = 50\nn = 60\nm = 8\ngamma = 1.0\nsteps = 0\nmeasure_every = 5\npair_sample = 10\n"
        ),
    );
    let out = bin()
        .args([
            "simulate-sgd",
            "--config",
            cfg0.to_str().unwrap(),
            "--out",
            cfg0.parent().unwrap().join("g0").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let run0 =
        std::fs::read_to_string(cfg0.parent().unwrap().join("g0/sgd_run_seed0.csv")).unwrap();
    assert_eq!(run0.lines().count(), 2); // header + initial measurement
    let _ = std::fs::remove_dir_all(&dir);
    let _ = std::fs::remove_dir_all(cfg0.parent().unwrap());
}

#[test]
fn validate_passes_on_reference_config() {
    let dir = tmpdir("validate");
    let cfg = write_config(&dir, CASE2);
    let out = bin()
        .args(["validate", "--config", cfg.to_str().unwrap(), "--out", dir.join("v").to_str().unwrap()])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("[PASS] q_r2_decay"));
    assert!(stdout.contains("[PASS] gradient_check"));
    assert!(!stdout.contains("[FAIL]"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn coeff_sweep_degenerate_grid_and_alias() {
    let dir = tmpdir("sweep");
    let body = r#"
[spec]
c_student = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]
c_teacher = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]
noise_sigma = 0.0
a_init = 5.0
"#;
    let cfg = write_config(&dir, body);
    // degenerate 1x1 grid through the spelled-out alias
    let out = bin()
        .args([
            "sweep-appendix-g",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join("w").to_str().unwrap(),
            "--c2=-5",
            "--c3=5",
            "--tau-max",
            "1e3",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("w/sweep_summary.json")).unwrap())
            .unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 1);
    assert!(dir.join("w").join("sweep_c2_m5_c3_5.csv").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use difftv_cli::{cmd_report, cmd_sweep, cmd_validate, REPORT_CSV, SVG_FILE};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_difftv"))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p
}

fn small_atom_config(dir: &Path, steps: &str) -> PathBuf {
    let target = repo().join("targets/point_atom_1d.json");
    write_config(
        dir,
        &format!(
            r#"{{"target": {target:?}, "schedule": {{"T": {steps}, "c0": 1.0, "c1": 2.0}},
               "density": {{"lo": -8, "hi": 8, "points": 1024, "leak_tol": 0.001}},
               "oracle": {{"n": 100000, "seed": 1, "pairs": 4}},
               "output": "unused"}}"#
        ),
    )
}

#[test]
fn shipped_default_config_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let rep = cmd_validate(&repo().join("configs/default.json"), Some(tmp.path())).unwrap();
    assert!(rep.passed, "{:?}", rep.first_failure());
    assert!(tmp.path().join("validation.json").is_file());
}

#[test]
fn oversized_rate_fails_validation_naming_the_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let target = repo().join("targets/bimodal_1d.json");
    let cfg = write_config(
        tmp.path(),
        &format!(
            r#"{{"target": {target:?}, "schedule": {{"T": [10], "c0": 2, "c1": 4}}, "output": "o"}}"#
        ),
    );
    let out = bin()
        .arg("validate")
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("schedule T=10"), "{stderr}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("schedule error"), "{stdout}");
}

#[test]
fn malformed_target_is_reported_as_a_parse_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("bad.json"),
        "{\"dim\": 1, \"components\": [",
    )
    .unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"target": "bad.json", "schedule": {"T": [50]}, "output": "o"}"#,
    );
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("bad.json") && stderr.to_lowercase().contains("pars"),
        "{stderr}"
    );
}

#[test]
fn single_step_count_sweep_emits_rows_without_slopes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_atom_config(tmp.path(), "[50]");
    let (rep, dir) = cmd_sweep(&cfg, Some(&tmp.path().join("out"))).unwrap();
    assert_eq!(rep.rows.len(), 4);
    assert!(rep.slopes.is_empty());
    assert!(dir.join(REPORT_CSV).is_file());
    assert!(dir.join("densities/T50_DDPM_ACCEL.csv").is_file());
    let table = cmd_report(&dir).unwrap();
    assert!(table.contains("at least 3 step counts"));
}

#[test]
fn report_is_idempotent_and_lists_four_slopes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_atom_config(tmp.path(), "[25, 50, 100]");
    let (_, dir) = cmd_sweep(&cfg, Some(&tmp.path().join("out"))).unwrap();
    let a = cmd_report(&dir).unwrap();
    let svg_a = fs::read_to_string(dir.join(SVG_FILE)).unwrap();
    let b = cmd_report(&dir).unwrap();
    let svg_b = fs::read_to_string(dir.join(SVG_FILE)).unwrap();
    assert_eq!(a, b);
    assert_eq!(svg_a, svg_b);
    assert!(svg_a.starts_with("<svg") && svg_a.trim_end().ends_with("</svg>"));
    let slope_lines = a
        .lines()
        .filter(|l| {
            l.split_whitespace()
                .nth(1)
                .is_some_and(|s| s.starts_with('-'))
        })
        .count();
    assert_eq!(slope_lines, 4, "{a}");
    assert!(a.contains("slope gap ODE_ACCEL - ODE_PLAIN"));
}

#[test]
fn report_on_empty_dir_names_expected_file() {
    let tmp = tempfile::tempdir().unwrap();
    let err = cmd_report(tmp.path()).unwrap_err().to_string();
    assert!(err.contains(REPORT_CSV), "{err}");
}

#[test]
fn two_dimensional_target_is_rejected_by_sweep() {
    let err = cmd_sweep(
        &repo().join("configs/trimodal_validate.json"),
        Some(&std::env::temp_dir()),
    )
    .unwrap_err()
    .to_string();
    assert!(err.contains("one-dimensional"), "{err}");
}

#[test]
fn sweep_csv_is_identical_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_atom_config(tmp.path(), "[25, 50]");
    let run = |threads: &str, sub: &str| {
        let out = bin()
            .env("DIFFTV_THREADS", threads)
            .env("RUST_LOG", "warn")
            .arg("sweep")
            .arg(&cfg)
            .arg("--out")
            .arg(tmp.path().join(sub))
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        fs::read(tmp.path().join(sub).join(REPORT_CSV)).unwrap()
    };
    let a = run("1", "a");
    let b = run("3", "b");
    let c = run("1", "c");
    assert_eq!(a, b);
    assert_eq!(a, c);
}

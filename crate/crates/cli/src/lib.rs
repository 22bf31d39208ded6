//! File-level commands behind the `difftv` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use difftv::experiment::{self, RunConfig, SweepOutput, ValidationReport};
use difftv::metrics::{ConvergenceReport, CSV_HEADER};
use difftv::samplers::SamplerKind;
use difftv::schedule::build_schedule;

pub mod svg;

pub const THREADS_ENV: &str = "DIFFTV_THREADS";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const LOGLOG_CSV: &str = "tv_loglog.csv";
pub const VALIDATION_JSON: &str = "validation.json";
pub const SVG_FILE: &str = "tv_loglog.svg";

/// Sizes the global thread pool from `DIFFTV_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool already initialised")?;
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn prepare_out(cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf> {
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.clone());
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs the validation suite and writes `validation.json`.
pub fn cmd_validate(config: &Path, out: Option<&Path>) -> Result<ValidationReport> {
    let cfg = load_config(config)?;
    let report =
        experiment::validate(&cfg).with_context(|| format!("validating {}", config.display()))?;
    let dir = prepare_out(&cfg, out)?;
    write(
        &dir.join(VALIDATION_JSON),
        &serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

/// Runs the sweep and writes reports, schedules, density comparisons and
/// log-log plot data.
pub fn cmd_sweep(config: &Path, out: Option<&Path>) -> Result<(ConvergenceReport, PathBuf)> {
    let cfg = load_config(config)?;
    let target = cfg
        .load_target()
        .with_context(|| format!("loading target {}", cfg.target.display()))?;
    let result = experiment::sweep(&cfg, &target)?;
    let dir = prepare_out(&cfg, out)?;
    write_sweep(&cfg, &result, &dir)?;
    Ok((result.report, dir))
}

fn write_sweep(cfg: &RunConfig, result: &SweepOutput, dir: &Path) -> Result<()> {
    let report = &result.report;
    write(&dir.join(REPORT_CSV), &report.to_csv())?;
    write(&dir.join(REPORT_JSON), &report.to_json())?;
    write(&dir.join(LOGLOG_CSV), &loglog_csv(report))?;
    write(
        &dir.join("config.json"),
        &serde_json::to_string_pretty(cfg)?,
    )?;

    let sched_dir = dir.join("schedules");
    let dens_dir = dir.join("densities");
    fs::create_dir_all(&sched_dir)?;
    fs::create_dir_all(&dens_dir)?;
    for &steps in &cfg.schedule.steps {
        let s = build_schedule(cfg.schedule_params(steps))?;
        write(&sched_dir.join(format!("T{steps}.csv")), &s.to_csv())?;
    }
    for cell in &result.cells {
        let steps = cell.row.steps;
        let q1 = &result
            .q1
            .iter()
            .find(|(t, _)| *t == steps)
            .expect("q1 computed for every T")
            .1;
        let name = format!("T{steps}_{}.csv", cell.row.kind);
        write(&dens_dir.join(name), &cell.p1.comparison_csv(q1)?)?;
    }
    Ok(())
}

/// Per-sampler `(log10 T, log10 TV)` pairs from the corrected TV column.
pub fn loglog_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("kind,T,log10_T,log10_tv\n");
    for kind in SamplerKind::ALL {
        for r in report.rows.iter().filter(|r| r.kind == kind) {
            let _ = writeln!(
                out,
                "{kind},{},{:.17e},{:.17e}",
                r.steps,
                (r.steps as f64).log10(),
                r.tv_corrected.log10()
            );
        }
    }
    out
}

/// Reads a sweep directory, writes the SVG plot and returns the summary
/// table.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let csv_path = dir.join(REPORT_CSV);
    if !csv_path.is_file() {
        bail!(
            "{} has no sweep output: expected {REPORT_CSV} (with header {CSV_HEADER}) produced by `difftv sweep`",
            dir.display()
        );
    }
    let text =
        fs::read_to_string(&csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
    let rows = ConvergenceReport::from_csv(&text)
        .map_err(|e| anyhow::anyhow!("{}: {e}", csv_path.display()))?;
    let report = ConvergenceReport::from_rows(rows)?;
    write(&dir.join(SVG_FILE), &svg::loglog_plot(&report))?;
    Ok(summary_table(&report))
}

pub fn summary_table(report: &ConvergenceReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<11} {:>6} {:>14} {:>14} {:>6}",
        "sampler", "T", "tv_corrected", "kl", "pinsk"
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<11} {:>6} {:>14.6e} {:>14.6e} {:>6}",
            r.kind.as_str(),
            r.steps,
            r.tv_corrected,
            r.kl,
            if r.pinsker_ok() { "ok" } else { "FAIL" }
        );
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "{:<11} {:>9} {:>10} {:>6} {:>9}",
        "sampler", "slope", "residual", "points", "excluded"
    );
    for s in &report.slopes {
        let _ = writeln!(
            out,
            "{:<11} {:>9.4} {:>10.2e} {:>6} {:>9}",
            s.kind.as_str(),
            s.fit.slope,
            s.fit.residual,
            s.fit.n_points,
            s.excluded_t.map_or("-".to_string(), |t| format!("T={t}"))
        );
    }
    if report.slopes.is_empty() {
        out.push_str("(slope fits need at least 3 step counts)\n");
    }
    out.push('\n');
    for (plain, accel) in [
        (SamplerKind::OdePlain, SamplerKind::OdeAccel),
        (SamplerKind::DdpmPlain, SamplerKind::DdpmAccel),
    ] {
        if let (Some(p), Some(a)) = (report.slope(plain), report.slope(accel)) {
            let _ = writeln!(
                out,
                "slope gap {accel} - {plain}: {:.4}",
                a.fit.slope - p.fit.slope
            );
        }
    }
    let _ = writeln!(
        out,
        "pinsker: {}",
        if report.pinsker_ok {
            "all rows ok"
        } else {
            "VIOLATED"
        }
    );
    out
}

//! Config-driven validation suite and convergence sweep.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{reverse_density, DensityGrid, DEFAULT_LEAK_TOL};
use crate::metrics::{kl_divergence, tv_distance, ConvergenceReport, ReportRow};
use crate::moments::{default_fd_step, moments, score_jacobian_fd, Posterior};
use crate::oracle::{oracle_gate, GateReport};
use crate::samplers::{ddpm_accel_step, ddpm_accel_step_kernel, SamplerKind, StepContext};
use crate::schedule::{build_schedule, verify_schedule_properties, Schedule, ScheduleParams};
use crate::target::MixtureTarget;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub steps: Vec<usize>,
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default = "default_c1")]
    pub c1: f64,
}

fn default_c0() -> f64 {
    ScheduleParams::DEFAULT_C0
}

fn default_c1() -> f64 {
    ScheduleParams::DEFAULT_C1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub leak_tol: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            lo: -8.0,
            hi: 8.0,
            points: 4096,
            leak_tol: DEFAULT_LEAK_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    /// Step count of the schedule used by the validation suite; defaults to
    /// the largest `T` of the sweep.
    #[serde(default, rename = "T")]
    pub steps: Option<usize>,
}

fn default_pairs() -> usize {
    20
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n: 200_000,
            seed: 0,
            pairs: default_pairs(),
            steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Target definition file, relative to the config file.
    pub target: PathBuf,
    pub schedule: ScheduleConfig,
    #[serde(default = "all_kinds")]
    pub samplers: Vec<SamplerKind>,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    pub output: PathBuf,
}

fn all_kinds() -> Vec<SamplerKind> {
    SamplerKind::ALL.to_vec()
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Loads a config and resolves its target path against the config's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_json(&text)?;
        if cfg.target.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.target = base.join(&cfg.target);
        }
        Ok(cfg)
    }

    fn check(&self) -> Result<(), Error> {
        let s = &self.schedule.steps;
        if s.is_empty() {
            return Err(Error::Config(
                "schedule.T must list at least one step count".into(),
            ));
        }
        if s.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "schedule.T must be strictly increasing".into(),
            ));
        }
        if self.samplers.is_empty() {
            return Err(Error::Config("samplers must not be empty".into()));
        }
        if s.len() < 3 {
            log::info!("fewer than 3 step counts: rate fits will be skipped");
        }
        Ok(())
    }

    pub fn load_target(&self) -> Result<MixtureTarget, Error> {
        MixtureTarget::from_path(&self.target).map_err(|source| Error::TargetFile {
            path: self.target.clone(),
            source,
        })
    }

    pub fn schedule_params(&self, steps: usize) -> ScheduleParams {
        ScheduleParams::new(steps, self.schedule.c0, self.schedule.c1)
    }

    pub fn validation_steps(&self) -> usize {
        self.oracle
            .steps
            .unwrap_or_else(|| *self.schedule.steps.last().expect("checked non-empty"))
    }
}

/// One named check of the validation suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckItem>,
    pub oracle: Option<GateReport>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn first_failure(&self) -> Option<&CheckItem> {
        self.checks.iter().find(|c| !c.passed)
    }
}

/// Worst relative error of the analytic Jacobian against central
/// differences over `count` random `(t, x)` with `x ~ q_t`.
pub fn jacobian_check(target: &MixtureTarget, schedule: &Schedule, count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let (t, x) = random_state(target, schedule, &mut rng);
        let fd = score_jacobian_fd(target, schedule, t, &x, default_fd_step(&x));
        let an = moments(target, schedule, t, &x).jac;
        worst = worst.max((&fd - &an).amax() / an.amax().max(1e-300));
    }
    worst
}

/// Worst absolute difference between the two forms of the accelerated
/// stochastic step over `count` random `(y, z, t)`, relative to `1 + ‖y'‖∞`.
pub fn form_equivalence_check(
    target: &MixtureTarget,
    schedule: &Schedule,
    count: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = target.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let (t, y) = random_state(target, schedule, &mut rng);
        let t = t.max(2);
        let z = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
        let m = moments(target, schedule, t, &y);
        let ctx = StepContext::new(schedule.coeffs(t), &m);
        let yv = DVector::from_column_slice(&y);
        let a = ddpm_accel_step(&yv, &z, &ctx);
        let b = ddpm_accel_step_kernel(&yv, &z, &ctx);
        worst = worst.max((&a - &b).amax() / (1.0 + a.amax()));
    }
    worst
}

/// Worst relative error of the score against central differences of
/// `ln q_t`.
pub fn score_gradient_check(
    target: &MixtureTarget,
    schedule: &Schedule,
    count: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let (t, x) = random_state(target, schedule, &mut rng);
        let post = Posterior::at_step(target, schedule, t);
        let s = post.eval(&x).score;
        let h = default_fd_step(&x);
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (post.log_density(&xp) - post.log_density(&xm)) / (2.0 * h);
            worst = worst.max((fd - s[j]).abs() / s.amax().max(1.0));
        }
    }
    worst
}

/// `t` uniform on `1..=T` and `x ~ q_t`.
pub fn random_state(
    target: &MixtureTarget,
    schedule: &Schedule,
    rng: &mut ChaCha8Rng,
) -> (usize, Vec<f64>) {
    let t = rng.random_range(1..=schedule.steps());
    let level = schedule.level(t);
    let x0 = target.sample_data(rng, 1);
    let x = x0
        .row(0)
        .iter()
        .map(|v| {
            level.alpha_bar.sqrt() * v
                + level.one_minus.sqrt() * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    (t, x)
}

pub const JACOBIAN_TOL: f64 = 1e-6;
pub const FORM_TOL: f64 = 1e-12;
pub const SCORE_TOL: f64 = 1e-5;
pub const ORACLE_Z: f64 = 4.0;

/// Schedule properties for every `T`, then oracle agreement, Jacobian,
/// score and form-equivalence checks on the validation schedule.
pub fn validate(cfg: &RunConfig) -> Result<ValidationReport, Error> {
    let mut checks = Vec::new();
    for &steps in &cfg.schedule.steps {
        let name = format!("schedule T={steps}");
        match build_schedule(cfg.schedule_params(steps)) {
            Ok(s) => {
                let rep = verify_schedule_properties(&s);
                let failed: Vec<String> = rep
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| {
                        format!(
                            "({}) worst margin {:.3e} at t={}",
                            c.name, c.worst_margin, c.worst_t
                        )
                    })
                    .collect();
                checks.push(CheckItem {
                    name,
                    passed: failed.is_empty(),
                    detail: if failed.is_empty() {
                        "properties (a)-(d) hold".into()
                    } else {
                        failed.join("; ")
                    },
                });
            }
            Err(e) => checks.push(CheckItem {
                name,
                passed: false,
                detail: format!("schedule error: {e}"),
            }),
        }
    }
    let target = cfg.load_target()?;
    let steps = cfg.validation_steps();
    let schedule = match build_schedule(cfg.schedule_params(steps)) {
        Ok(s) => s,
        Err(e) => {
            checks.push(CheckItem {
                name: format!("validation schedule T={steps}"),
                passed: false,
                detail: format!("schedule error: {e}"),
            });
            return Ok(ValidationReport {
                checks,
                oracle: None,
                passed: false,
            });
        }
    };

    let gate = oracle_gate(
        &target,
        &schedule,
        cfg.oracle.pairs,
        cfg.oracle.n,
        cfg.oracle.seed,
        ORACLE_Z,
    )?;
    checks.push(CheckItem {
        name: "oracle agreement".into(),
        passed: gate.passed,
        detail: match gate.first_failure() {
            Some(f) => f,
            None => format!(
                "{} points within {ORACLE_Z} SE ({} redrawn for low effective sample size)",
                gate.points.len(),
                gate.redrawn
            ),
        },
    });
    let seed = cfg.oracle.seed;
    let jac = jacobian_check(&target, &schedule, 50, seed ^ 1);
    checks.push(CheckItem {
        name: "jacobian finite differences".into(),
        passed: jac <= JACOBIAN_TOL,
        detail: format!("max relative error {jac:.3e} (limit {JACOBIAN_TOL:e})"),
    });
    let score = score_gradient_check(&target, &schedule, 50, seed ^ 2);
    checks.push(CheckItem {
        name: "score vs log-density gradient".into(),
        passed: score <= SCORE_TOL,
        detail: format!("max relative error {score:.3e} (limit {SCORE_TOL:e})"),
    });
    let form = form_equivalence_check(&target, &schedule, 100, seed ^ 3);
    checks.push(CheckItem {
        name: "accelerated stochastic step forms".into(),
        passed: form <= FORM_TOL,
        detail: format!("max difference {form:.3e} (limit {FORM_TOL:e})"),
    });
    let passed = checks.iter().all(|c| c.passed);
    Ok(ValidationReport {
        checks,
        oracle: Some(gate),
        passed,
    })
}

/// A `(T, sampler)` cell with the grids it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub row: ReportRow,
    pub p1: DensityGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub report: ConvergenceReport,
    pub cells: Vec<SweepCell>,
    /// Exact `q_1` per step count, in `schedule.T` order.
    pub q1: Vec<(usize, DensityGrid)>,
}

/// Grid-exact TV and KL between `q_1` and `p_1` for every `(T, sampler)`.
pub fn sweep(cfg: &RunConfig, target: &MixtureTarget) -> Result<SweepOutput, Error> {
    if target.dim() != 1 {
        return Err(Error::Config(format!(
            "the sweep's grid engine needs a one-dimensional target (got d = {})",
            target.dim()
        )));
    }
    let dc = cfg.density;
    let schedules: Vec<Schedule> = cfg
        .schedule
        .steps
        .iter()
        .map(|&t| build_schedule(cfg.schedule_params(t)))
        .collect::<Result<_, _>>()?;
    let q1: Vec<DensityGrid> = schedules
        .iter()
        .map(|s| DensityGrid::exact_marginal(target, s, 1, dc.lo, dc.hi, dc.points))
        .collect::<Result<_, _>>()?;

    let cells: Vec<(usize, SamplerKind)> = (0..schedules.len())
        .flat_map(|i| cfg.samplers.iter().map(move |&k| (i, k)))
        .collect();
    let results: Vec<Result<SweepCell, Error>> = cells
        .par_iter()
        .map(|&(i, kind)| {
            let s = &schedules[i];
            let p1 = reverse_density(target, s, kind, dc.lo, dc.hi, dc.points, dc.leak_tol)?;
            let tv = tv_distance(&p1, &q1[i])?;
            let kl = kl_divergence(&q1[i], &p1)?;
            Ok(SweepCell {
                row: ReportRow {
                    steps: s.steps(),
                    kind,
                    tv: tv.raw,
                    tv_corrected: tv.corrected,
                    kl: kl.value,
                    grid_points: dc.points,
                    leaked_mass: p1.leaked_mass_bound + q1[i].leaked_mass_bound,
                },
                p1,
            })
        })
        .collect();
    let cells: Vec<SweepCell> = results.into_iter().collect::<Result<_, _>>()?;
    let report = ConvergenceReport::from_rows(cells.iter().map(|c| c.row).collect())?;
    Ok(SweepOutput {
        report,
        cells,
        q1: cfg.schedule.steps.iter().copied().zip(q1).collect(),
    })
}

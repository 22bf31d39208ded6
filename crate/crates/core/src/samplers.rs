//! The four reverse update rules and a trajectory runner.
//!
//! All step maps are pure. They read the schedule coefficients of step `t`
//! and the exact moment bundle at the current state from a [`StepContext`].
//! Scalar twins (`*_1d`) are used by the density engine and by the runner
//! for one-dimensional targets.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::moments::{MomentBundle, Moments1d, Posterior};
use crate::rng::{stream_rng, INIT_STREAM};
use crate::schedule::{Schedule, ScheduleParams, StepCoeffs};
use crate::target::{MixtureTarget, Samples};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(rename = "ODE_PLAIN")]
    OdePlain,
    #[serde(rename = "ODE_ACCEL")]
    OdeAccel,
    #[serde(rename = "DDPM_PLAIN")]
    DdpmPlain,
    #[serde(rename = "DDPM_ACCEL")]
    DdpmAccel,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [
        SamplerKind::OdePlain,
        SamplerKind::OdeAccel,
        SamplerKind::DdpmPlain,
        SamplerKind::DdpmAccel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::OdePlain => "ODE_PLAIN",
            SamplerKind::OdeAccel => "ODE_ACCEL",
            SamplerKind::DdpmPlain => "DDPM_PLAIN",
            SamplerKind::DdpmAccel => "DDPM_ACCEL",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, SamplerKind::DdpmPlain | SamplerKind::DdpmAccel)
    }

    pub fn is_accelerated(self) -> bool {
        matches!(self, SamplerKind::OdeAccel | SamplerKind::DdpmAccel)
    }

    /// The plain counterpart of an accelerated kind (identity otherwise).
    pub fn plain(self) -> SamplerKind {
        match self {
            SamplerKind::OdeAccel => SamplerKind::OdePlain,
            SamplerKind::DdpmAccel => SamplerKind::DdpmPlain,
            k => k,
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SamplerKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown sampler kind '{s}'"))
    }
}

/// Sampler choice plus seeding. Trajectory `i` at step `t` draws from the
/// stream `(seed, i, t)`; the initial state uses stream 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub seed: u64,
}

impl SamplerSpec {
    pub fn new(kind: SamplerKind, seed: u64) -> Self {
        Self { kind, seed }
    }
}

/// Step-`t` coefficients together with the moments at the current state.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub coeffs: StepCoeffs,
    pub moments: &'a MomentBundle,
}

impl<'a> StepContext<'a> {
    pub fn new(coeffs: StepCoeffs, moments: &'a MomentBundle) -> Self {
        Self { coeffs, moments }
    }
}

/// `μ_t(y) = (y + (1−α_t) s_t(y))/√α_t`.
pub fn ddpm_mean(y: &DVector<f64>, ctx: &StepContext) -> DVector<f64> {
    let c = &ctx.coeffs;
    (y + &ctx.moments.score * c.beta) / c.alpha.sqrt()
}

pub fn ode_step(x: &DVector<f64>, ctx: &StepContext) -> DVector<f64> {
    let c = &ctx.coeffs;
    (x + &ctx.moments.score * (0.5 * c.beta)) / c.alpha.sqrt()
}

pub fn ode_accel_step(x: &DVector<f64>, ctx: &StepContext) -> DVector<f64> {
    let c = &ctx.coeffs;
    let s = &ctx.moments.score;
    let b2 = c.beta * c.beta / 8.0;
    let coef = 0.5 * c.beta + b2 / c.level.one_minus - b2 * s.norm_squared();
    (x + s * coef + &ctx.moments.w_corr * b2) / c.alpha.sqrt()
}

pub fn ddpm_step(y: &DVector<f64>, z: &DVector<f64>, ctx: &StepContext) -> DVector<f64> {
    ddpm_mean(y, ctx) + z * ctx.coeffs.sigma()
}

/// Accelerated stochastic step written with the noise-covariance action
/// `v_t(y, z) = E[W̄W̄ᵀ | X_t = y] z`.
pub fn ddpm_accel_step(y: &DVector<f64>, z: &DVector<f64>, ctx: &StepContext) -> DVector<f64> {
    let c = &ctx.coeffs;
    let m = ctx.moments;
    let v = c.level.one_minus;
    let vz = &m.noise_cov * z;
    let ssz = &m.score * (m.score.dot(z) * v);
    let bracket = z + ssz - vz;
    let noise = z - bracket * (c.beta / (2.0 * v));
    ddpm_mean(y, ctx) + noise * c.sigma()
}

/// The same step written as a state-dependent Gaussian kernel:
/// `μ_t(y) + σ_t (I − (1−α_t)/(2(1−ᾱ_t)) J_t(y)) z`.
pub fn ddpm_accel_step_kernel(
    y: &DVector<f64>,
    z: &DVector<f64>,
    ctx: &StepContext,
) -> DVector<f64> {
    ddpm_mean(y, ctx) + accel_noise_factor(ctx) * z * ctx.coeffs.sigma()
}

/// `I − (1−α_t)/(2(1−ᾱ_t)) J_t(y)`.
pub fn accel_noise_factor(ctx: &StepContext) -> DMatrix<f64> {
    let d = ctx.moments.jac.nrows();
    DMatrix::identity(d, d) - &ctx.moments.jac * (ctx.coeffs.relative_step() / 2.0)
}

/// Applies the update rule of `kind`; `z` is ignored by the deterministic kinds.
pub fn step(
    kind: SamplerKind,
    x: &DVector<f64>,
    z: &DVector<f64>,
    ctx: &StepContext,
) -> DVector<f64> {
    match kind {
        SamplerKind::OdePlain => ode_step(x, ctx),
        SamplerKind::OdeAccel => ode_accel_step(x, ctx),
        SamplerKind::DdpmPlain => ddpm_step(x, z, ctx),
        SamplerKind::DdpmAccel => ddpm_accel_step(x, z, ctx),
    }
}

pub fn ode_step_1d(x: f64, c: &StepCoeffs, m: &Moments1d) -> f64 {
    (x + 0.5 * c.beta * m.score) / c.alpha.sqrt()
}

pub fn ode_accel_step_1d(x: f64, c: &StepCoeffs, m: &Moments1d) -> f64 {
    let b2 = c.beta * c.beta / 8.0;
    let coef = 0.5 * c.beta + b2 / c.level.one_minus - b2 * m.score * m.score;
    (x + coef * m.score + b2 * m.w_corr) / c.alpha.sqrt()
}

pub fn ddpm_mean_1d(y: f64, c: &StepCoeffs, m: &Moments1d) -> f64 {
    (y + c.beta * m.score) / c.alpha.sqrt()
}

/// Signed noise multiplier of the one-dimensional reverse kernel at `y`.
pub fn kernel_factor_1d(kind: SamplerKind, c: &StepCoeffs, m: &Moments1d) -> f64 {
    match kind {
        SamplerKind::DdpmPlain => c.sigma(),
        SamplerKind::DdpmAccel => c.sigma() * (1.0 - 0.5 * c.relative_step() * m.jac),
        _ => 0.0,
    }
}

/// Standard deviation of the one-dimensional reverse kernel at `y`.
pub fn kernel_std_1d(kind: SamplerKind, c: &StepCoeffs, m: &Moments1d) -> f64 {
    kernel_factor_1d(kind, c, m).abs()
}

/// Derivative of `μ_t` in `d = 1`: `(1 − (1−α_t) J_t/(1−ᾱ_t))/√α_t`.
pub fn ddpm_mean_slope_1d(c: &StepCoeffs, m: &Moments1d) -> f64 {
    (1.0 - c.relative_step() * m.jac) / c.alpha.sqrt()
}

/// Scalar form of [`step`].
pub fn step_1d(kind: SamplerKind, x: f64, z: f64, c: &StepCoeffs, m: &Moments1d) -> f64 {
    match kind {
        SamplerKind::OdePlain => ode_step_1d(x, c, m),
        SamplerKind::OdeAccel => ode_accel_step_1d(x, c, m),
        SamplerKind::DdpmPlain | SamplerKind::DdpmAccel => {
            ddpm_mean_1d(x, c, m) + kernel_factor_1d(kind, c, m) * z
        }
    }
}

/// A trajectory whose state became non-finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryFailure {
    pub index: usize,
    /// The step whose output was non-finite.
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReverseRun {
    /// All `n` endpoints `Y_1` in trajectory order; failed rows hold the
    /// first non-finite state.
    pub endpoints: Samples,
    pub failures: Vec<TrajectoryFailure>,
}

impl ReverseRun {
    /// Endpoints of the trajectories that stayed finite.
    pub fn finite_samples(&self) -> Samples {
        let dim = self.endpoints.dim;
        let data = self
            .endpoints
            .rows()
            .filter(|r| r.iter().all(|v| v.is_finite()))
            .flat_map(|r| r.iter().copied())
            .collect();
        Samples { dim, data }
    }

    pub fn to_csv(&self) -> String {
        let dim = self.endpoints.dim;
        let mut out: String = (0..dim)
            .map(|k| format!("y{k}"))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for r in self.endpoints.rows() {
            let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Run metadata written next to a sample dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub target: String,
    pub schedule: Option<ScheduleParams>,
    pub kind: SamplerKind,
    pub seed: u64,
    pub n: usize,
    pub failures: usize,
}

/// Runs `n` reverse trajectories from `Y_T ~ N(0, I)` down to `Y_1`.
pub fn run_reverse(
    target: &MixtureTarget,
    schedule: &Schedule,
    spec: SamplerSpec,
    n: usize,
) -> ReverseRun {
    let steps = schedule.steps();
    let d = target.dim();
    // posts[t - 2] is the posterior at step t.
    let posts: Vec<Posterior> = (2..=steps)
        .map(|t| Posterior::at_step(target, schedule, t))
        .collect();
    let coeffs: Vec<StepCoeffs> = (2..=steps).map(|t| schedule.coeffs(t)).collect();

    let results: Vec<(Vec<f64>, Option<usize>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(spec.seed, i as u64, INIT_STREAM);
            let mut y: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let mut z = vec![0.0; d];
            for t in (2..=steps).rev() {
                let post = &posts[t - 2];
                let c = &coeffs[t - 2];
                if spec.kind.is_stochastic() {
                    let mut r = stream_rng(spec.seed, i as u64, t as u64);
                    z.iter_mut().for_each(|v| *v = r.sample(StandardNormal));
                }
                if d == 1 {
                    let m = post.eval_1d(y[0]);
                    y[0] = step_1d(spec.kind, y[0], z[0], c, &m);
                } else {
                    let m = post.eval(&y);
                    let ctx = StepContext::new(*c, &m);
                    let yv = DVector::from_column_slice(&y);
                    let zv = DVector::from_column_slice(&z);
                    y = step(spec.kind, &yv, &zv, &ctx).iter().copied().collect();
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return (y, Some(t));
                }
            }
            (y, None)
        })
        .collect();

    let mut data = Vec::with_capacity(n * d);
    let mut failures = Vec::new();
    for (i, (y, fail)) in results.into_iter().enumerate() {
        data.extend(y);
        if let Some(t) = fail {
            failures.push(TrajectoryFailure { index: i, t });
        }
    }
    if !failures.is_empty() {
        log::warn!(
            "{} of {n} {} trajectories became non-finite",
            failures.len(),
            spec.kind
        );
    }
    ReverseRun {
        endpoints: Samples { dim: d, data },
        failures,
    }
}

//! Reverse-process laws in one dimension, to quadrature precision.
//!
//! Stochastic samplers push a grid density through their Gaussian kernels
//! step by step. Deterministic samplers are handled by inverting the
//! composed maps pointwise and applying the change-of-variables formula.
//! Samples in higher dimension fall back to histograms.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::moments::Posterior;
use crate::samplers::{self, SamplerKind};
use crate::schedule::{Schedule, StepCoeffs};
use crate::target::MixtureTarget;

pub const MIN_POINTS: usize = 256;
pub const DEFAULT_LEAK_TOL: f64 = 1e-3;
/// Kernels are evaluated out to this many standard deviations.
const KERNEL_HALF_WIDTH: f64 = 10.0;
/// Below this many grid spacings of kernel width, a step is integrated by
/// Gauss–Hermite quadrature around the kernel's preimage instead.
const NARROW_KERNEL: f64 = 1.25;
const HERMITE_NODES: usize = 20;
const SCATTER_BLOCK: usize = 256;
const MAX_NEWTON: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("grid needs at least {MIN_POINTS} points (got {0})")]
    TooFewPoints(usize),
    #[error("grid window [{lo}, {hi}] is empty or non-finite")]
    BadWindow { lo: f64, hi: f64 },
    #[error("grids differ: [{0:?}] vs [{1:?}]")]
    GridMismatch((f64, f64, usize), (f64, f64, usize)),
    #[error("the grid engine needs a one-dimensional target (got d = {0})")]
    NotOneDim(usize),
    #[error("{0} is not a {1} sampler")]
    WrongKind(SamplerKind, &'static str),
    #[error("mass in window fell to {mass:.6} at step {t} (leak_tol {leak_tol}); widen the grid")]
    MassLeak { t: usize, mass: f64, leak_tol: f64 },
    #[error("step {t} map is not increasing near x = {x} (derivative {slope})")]
    NonMonotone { t: usize, x: f64, slope: f64 },
    #[error("Newton inversion failed at step {t} for target value {y}")]
    NewtonFailed { t: usize, y: f64 },
    #[error("no samples fall inside the histogram window")]
    EmptyWindow,
    #[error("need at least {need} samples (got {got})")]
    TooFewSamples { need: usize, got: usize },
}

/// A density sampled on a uniform grid over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
    pub values: Vec<f64>,
    /// Trapezoidal integral of `values`.
    pub mass_in_window: f64,
    /// Upper bound on the probability mass outside the window.
    pub leaked_mass_bound: f64,
}

fn check_window(lo: f64, hi: f64, n: usize) -> Result<(), DensityError> {
    if n < MIN_POINTS {
        return Err(DensityError::TooFewPoints(n));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(DensityError::BadWindow { lo, hi });
    }
    Ok(())
}

fn trapz(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

impl DensityGrid {
    pub fn new(
        lo: f64,
        hi: f64,
        values: Vec<f64>,
        leaked_mass_bound: f64,
    ) -> Result<Self, DensityError> {
        let n = values.len();
        check_window(lo, hi, n)?;
        let h = (hi - lo) / (n - 1) as f64;
        Ok(Self {
            lo,
            hi,
            n_points: n,
            mass_in_window: trapz(&values, h),
            values,
            leaked_mass_bound,
        })
    }

    pub fn from_fn(
        lo: f64,
        hi: f64,
        n: usize,
        leaked_mass_bound: f64,
        f: impl Fn(f64) -> f64 + Sync,
    ) -> Result<Self, DensityError> {
        check_window(lo, hi, n)?;
        let h = (hi - lo) / (n - 1) as f64;
        let values = (0..n)
            .into_par_iter()
            .map(|i| f(lo + i as f64 * h))
            .collect();
        Self::new(lo, hi, values, leaked_mass_bound)
    }

    /// `N(0, 1)` on the window, the law of `Y_T`.
    pub fn standard_normal(lo: f64, hi: f64, n: usize) -> Result<Self, DensityError> {
        let leak = normal_cdf(lo) + normal_sf(hi);
        Self::from_fn(lo, hi, n, leak, normal_pdf)
    }

    /// The exact forward marginal `q_t` of a one-dimensional target.
    pub fn exact_marginal(
        target: &MixtureTarget,
        schedule: &Schedule,
        t: usize,
        lo: f64,
        hi: f64,
        n: usize,
    ) -> Result<Self, DensityError> {
        if target.dim() != 1 {
            return Err(DensityError::NotOneDim(target.dim()));
        }
        let level = schedule.level(t);
        let post = Posterior::new(target, level);
        let leak: f64 = target
            .components()
            .iter()
            .map(|c| {
                let m = level.alpha_bar.sqrt() * c.mean[0];
                let sd = (level.alpha_bar * c.cov[(0, 0)] + level.one_minus).sqrt();
                c.weight * (normal_cdf((lo - m) / sd) + normal_sf((hi - m) / sd))
            })
            .sum();
        Self::from_fn(lo, hi, n, leak, |x| post.eval_1d(x).density)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }

    pub fn same_grid(&self, other: &DensityGrid) -> bool {
        self.lo == other.lo && self.hi == other.hi && self.n_points == other.n_points
    }

    pub fn ensure_same_grid(&self, other: &DensityGrid) -> Result<(), DensityError> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(DensityError::GridMismatch(
                (self.lo, self.hi, self.n_points),
                (other.lo, other.hi, other.n_points),
            ))
        }
    }

    /// Six-point Lagrange interpolation; zero outside the window.
    pub fn interpolate(&self, x: f64) -> f64 {
        if !(x >= self.lo && x <= self.hi) {
            return 0.0;
        }
        let h = self.spacing();
        let u = (x - self.lo) / h;
        let n = self.n_points;
        let i = (u.floor() as usize).min(n - 2);
        let start = i.saturating_sub(2).min(n - 6);
        let mut acc = 0.0;
        for a in start..start + 6 {
            let mut l = 1.0;
            for b in start..start + 6 {
                if a != b {
                    l *= (u - b as f64) / (a as f64 - b as f64);
                }
            }
            acc += l * self.values[a];
        }
        acc
    }

    /// Cumulative trapezoidal integral at each grid point.
    pub fn cumulative(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut out = Vec::with_capacity(self.n_points);
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }

    /// Piecewise-linear CDF from [`DensityGrid::cumulative`].
    pub fn cdf_fn(&self) -> impl Fn(f64) -> f64 + '_ {
        let cum = self.cumulative();
        let h = self.spacing();
        move |x: f64| {
            if x <= self.lo {
                return 0.0;
            }
            if x >= self.hi {
                return cum[self.n_points - 1];
            }
            let u = (x - self.lo) / h;
            let i = (u.floor() as usize).min(self.n_points - 2);
            let f = u - i as f64;
            cum[i] * (1.0 - f) + cum[i + 1] * f
        }
    }

    /// CSV with columns `y,p_1,q_1,abs_diff`.
    pub fn comparison_csv(&self, q: &DensityGrid) -> Result<String, DensityError> {
        self.ensure_same_grid(q)?;
        let mut out = String::from("y,p_1,q_1,abs_diff\n");
        for i in 0..self.n_points {
            let (p, qq) = (self.values[i], q.values[i]);
            out.push_str(&format!(
                "{:.9},{:e},{:e},{:e}\n",
                self.point(i),
                p,
                qq,
                (p - qq).abs()
            ));
        }
        Ok(out)
    }
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `1 − Φ(x)` without cancellation.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Gauss–Hermite nodes and weights for `∫ e^{-ξ²} f(ξ) dξ` (Golub–Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jm = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jm[(k, k - 1)] = b;
        jm[(k - 1, k)] = b;
    }
    let eig = jm.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Safeguarded Newton for an increasing function: finds `x` with
/// `f(x) = target`. `eval` returns `(f(x), f'(x))`.
pub fn invert_increasing(
    mut eval: impl FnMut(f64) -> (f64, f64),
    target: f64,
    x0: f64,
) -> Option<f64> {
    let tol = 1e-14 * target.abs().max(1.0);
    let (mut below, mut above) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut x = x0;
    let mut expand = 1.0_f64;
    for _ in 0..MAX_NEWTON {
        let (f, df) = eval(x);
        if !f.is_finite() {
            return None;
        }
        let r = f - target;
        if r.abs() <= tol {
            return Some(x);
        }
        if r < 0.0 {
            below = x;
        } else {
            above = x;
        }
        let mut next = if df > 0.0 && df.is_finite() {
            x - r / df
        } else {
            f64::NAN
        };
        let bracketed = below.is_finite() && above.is_finite();
        if !(next > below && next < above) {
            next = if bracketed {
                0.5 * (below + above)
            } else {
                expand *= 2.0;
                if r < 0.0 {
                    x + expand * x.abs().max(1.0)
                } else {
                    x - expand * x.abs().max(1.0)
                }
            };
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return Some(next);
        }
        x = next;
    }
    None
}

/// Mass of `N(m, s²)` outside `[lo, hi]`.
fn outside_mass(m: f64, s: f64, lo: f64, hi: f64) -> f64 {
    if s == 0.0 {
        return if m < lo || m > hi { 1.0 } else { 0.0 };
    }
    normal_cdf((lo - m) / s) + normal_sf((hi - m) / s)
}

struct SourceKernel {
    weight: f64,
    mean: f64,
    std: f64,
}

/// Law of `Y_1` for a stochastic sampler, starting from `grid_t` as the law
/// of `Y_T`.
pub fn propagate_stochastic(
    grid_t: &DensityGrid,
    target: &MixtureTarget,
    schedule: &Schedule,
    kind: SamplerKind,
    leak_tol: f64,
) -> Result<DensityGrid, DensityError> {
    if target.dim() != 1 {
        return Err(DensityError::NotOneDim(target.dim()));
    }
    if !kind.is_stochastic() {
        return Err(DensityError::WrongKind(kind, "stochastic"));
    }
    let mut grid = grid_t.clone();
    let (gh_nodes, gh_weights) = gauss_hermite(HERMITE_NODES);
    for t in (2..=schedule.steps()).rev() {
        let post = Posterior::at_step(target, schedule, t);
        let c = schedule.coeffs(t);
        grid = stochastic_step(&grid, &post, &c, kind, &gh_nodes, &gh_weights);
        if grid.mass_in_window < 1.0 - leak_tol {
            return Err(DensityError::MassLeak {
                t,
                mass: grid.mass_in_window,
                leak_tol,
            });
        }
    }
    Ok(grid)
}

fn stochastic_step(
    grid: &DensityGrid,
    post: &Posterior,
    c: &StepCoeffs,
    kind: SamplerKind,
    gh_nodes: &[f64],
    gh_weights: &[f64],
) -> DensityGrid {
    let n = grid.n_points;
    let h = grid.spacing();
    let (lo, hi) = (grid.lo, grid.hi);

    let kernels: Vec<SourceKernel> = (0..n)
        .map(|j| {
            let x = grid.point(j);
            let m = post.eval_1d(x);
            let tw = if j == 0 || j == n - 1 { 0.5 * h } else { h };
            SourceKernel {
                weight: tw * grid.values[j],
                mean: samplers::ddpm_mean_1d(x, c, &m),
                std: samplers::kernel_std_1d(kind, c, &m),
            }
        })
        .collect();
    let min_width = (0..n)
        .map(|j| {
            let m = post.eval_1d(grid.point(j));
            let slope = samplers::ddpm_mean_slope_1d(c, &m).abs();
            kernels[j].std.min(kernels[j].std / slope)
        })
        .fold(f64::INFINITY, f64::min);
    let step_leak: f64 = kernels
        .iter()
        .map(|k| k.weight * outside_mass(k.mean, k.std, lo, hi))
        .sum();

    let values = if min_width >= NARROW_KERNEL * h {
        scatter(&kernels, lo, h, n)
    } else {
        gather(grid, post, c, kind, gh_nodes, gh_weights)
    };
    let mut out = DensityGrid::new(lo, hi, values, 0.0).expect("same window");
    out.leaked_mass_bound = grid.leaked_mass_bound + step_leak;
    out
}

/// Trapezoidal quadrature over sources, each spreading a Gaussian onto the
/// grid. Blocks of sources are summed in a fixed order.
fn scatter(kernels: &[SourceKernel], lo: f64, h: f64, n: usize) -> Vec<f64> {
    let partials: Vec<Vec<f64>> = kernels
        .par_chunks(SCATTER_BLOCK)
        .map(|block| {
            let mut acc = vec![0.0; n];
            for k in block {
                if k.weight == 0.0 {
                    continue;
                }
                spread(k, lo, h, &mut acc);
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; n];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Adds `weight · N(y_i; mean, std²)` to `acc` for grid points within the
/// kernel's half-width, using the ratio recurrence `e_{i+1} = e_i r_i`,
/// `r_{i+1} = r_i e^{-h²/std²}`.
fn spread(k: &SourceKernel, lo: f64, h: f64, acc: &mut [f64]) {
    let n = acc.len() as isize;
    let reach = (KERNEL_HALF_WIDTH * k.std / h).ceil() as isize;
    let centre = ((k.mean - lo) / h).round() as isize;
    let first = (centre - reach).max(0);
    let last = (centre + reach).min(n - 1);
    if first > last {
        return;
    }
    let inv2s2 = 0.5 / (k.std * k.std);
    let norm = k.weight / (k.std * (2.0 * std::f64::consts::PI).sqrt());
    let q = (-2.0 * h * h * inv2s2).exp();
    let start = centre.clamp(first, last);
    let d0 = lo + start as f64 * h - k.mean;
    let e0 = (-d0 * d0 * inv2s2).exp();
    acc[start as usize] += norm * e0;

    let mut e = e0;
    let mut r = (-(2.0 * d0 * h + h * h) * inv2s2).exp();
    for i in start + 1..=last {
        e *= r;
        r *= q;
        acc[i as usize] += norm * e;
    }
    let mut e = e0;
    let mut r = (-(-2.0 * d0 * h + h * h) * inv2s2).exp();
    for i in (first..start).rev() {
        e *= r;
        r *= q;
        acc[i as usize] += norm * e;
    }
}

/// Per output point: locate the preimage `x*` of `y` under `μ_t` and
/// integrate `p(x) N(y; μ_t(x), s(x)²)` by Gauss–Hermite around it.
fn gather(
    grid: &DensityGrid,
    post: &Posterior,
    c: &StepCoeffs,
    kind: SamplerKind,
    gh_nodes: &[f64],
    gh_weights: &[f64],
) -> Vec<f64> {
    let (lo, hi) = (grid.lo, grid.hi);
    (0..grid.n_points)
        .into_par_iter()
        .map(|i| {
            let y = grid.point(i);
            let mean_and_slope = |x: f64| {
                let m = post.eval_1d(x);
                (
                    samplers::ddpm_mean_1d(x, c, &m),
                    samplers::ddpm_mean_slope_1d(c, &m),
                )
            };
            let Some(xs) = invert_increasing(mean_and_slope, y, c.alpha.sqrt() * y) else {
                return 0.0;
            };
            let m = post.eval_1d(xs);
            let tau =
                samplers::kernel_std_1d(kind, c, &m) / samplers::ddpm_mean_slope_1d(c, &m).abs();
            if xs + 12.0 * tau < lo || xs - 12.0 * tau > hi {
                return 0.0;
            }
            let scale = std::f64::consts::SQRT_2 * tau;
            let mut acc = 0.0;
            for (xi, wi) in gh_nodes.iter().zip(gh_weights) {
                let x = xs + scale * xi;
                let p = grid.interpolate(x);
                if p == 0.0 {
                    continue;
                }
                let mk = post.eval_1d(x);
                let mu = samplers::ddpm_mean_1d(x, c, &mk);
                let s = samplers::kernel_std_1d(kind, c, &mk);
                let z = (y - mu) / s;
                let kernel = normal_pdf(z) / s;
                acc += wi * (xi * xi).exp() * p * kernel;
            }
            acc * scale
        })
        .collect()
}

/// Result of pulling evaluation points back through a deterministic chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Pushforward {
    pub grid: DensityGrid,
    /// `y_T` with `Φ_2 ∘ … ∘ Φ_T(y_T) = y` for each grid point `y`.
    pub preimages: Vec<f64>,
}

impl Pushforward {
    /// Exact CDF of `Y_1` at the grid points: `Φ(y_T(y))`.
    pub fn cdf(&self) -> Vec<f64> {
        self.preimages.iter().map(|&x| normal_cdf(x)).collect()
    }
}

/// Law of `Y_1` for a deterministic sampler, evaluated on a grid.
pub fn pushforward_deterministic(
    lo: f64,
    hi: f64,
    n: usize,
    target: &MixtureTarget,
    schedule: &Schedule,
    kind: SamplerKind,
) -> Result<DensityGrid, DensityError> {
    pushforward_with_preimages(lo, hi, n, target, schedule, kind).map(|p| p.grid)
}

/// One deterministic step `Φ_t` in `d = 1`.
fn flow_map(kind: SamplerKind, post: &Posterior, c: &StepCoeffs, x: f64) -> f64 {
    let m = post.eval_1d(x);
    samplers::step_1d(kind, x, 0.0, c, &m)
}

fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

pub fn pushforward_with_preimages(
    lo: f64,
    hi: f64,
    n: usize,
    target: &MixtureTarget,
    schedule: &Schedule,
    kind: SamplerKind,
) -> Result<Pushforward, DensityError> {
    check_window(lo, hi, n)?;
    if target.dim() != 1 {
        return Err(DensityError::NotOneDim(target.dim()));
    }
    if kind.is_stochastic() {
        return Err(DensityError::WrongKind(kind, "deterministic"));
    }
    let steps: Vec<(Posterior, StepCoeffs)> = (2..=schedule.steps())
        .map(|t| (Posterior::at_step(target, schedule, t), schedule.coeffs(t)))
        .collect();
    let h = (hi - lo) / (n - 1) as f64;

    let solved: Vec<Result<(f64, f64), DensityError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let y = lo + i as f64 * h;
            let mut x = y;
            let mut log_jac = 0.0;
            for (post, c) in &steps {
                let t = c.t;
                let f = |u: f64| {
                    let d = fd_step(u);
                    let slope = (flow_map(kind, post, c, u + d) - flow_map(kind, post, c, u - d))
                        / (2.0 * d);
                    (flow_map(kind, post, c, u), slope)
                };
                let target_value = x;
                x = invert_increasing(f, target_value, c.alpha.sqrt() * target_value)
                    .ok_or(DensityError::NewtonFailed { t, y: target_value })?;
                let (_, slope) = f(x);
                if !(slope > 0.0) {
                    return Err(DensityError::NonMonotone { t, x, slope });
                }
                log_jac += slope.ln();
            }
            Ok((x, log_jac))
        })
        .collect();

    let mut preimages = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for r in solved {
        let (x, log_jac) = r?;
        preimages.push(x);
        values.push((-0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln() - log_jac).exp());
    }
    if let Some(w) = preimages.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(DensityError::NonMonotone {
            t: 0,
            x: lo + w as f64 * h,
            slope: 0.0,
        });
    }
    let leak = normal_cdf(preimages[0]) + normal_sf(preimages[n - 1]);
    Ok(Pushforward {
        grid: DensityGrid::new(lo, hi, values, leak)?,
        preimages,
    })
}

/// Law of `Y_1` for any sampler on the given window. Stochastic samplers
/// start from `N(0, 1)` on the same grid.
pub fn reverse_density(
    target: &MixtureTarget,
    schedule: &Schedule,
    kind: SamplerKind,
    lo: f64,
    hi: f64,
    n: usize,
    leak_tol: f64,
) -> Result<DensityGrid, DensityError> {
    if kind.is_stochastic() {
        let start = DensityGrid::standard_normal(lo, hi, n)?;
        propagate_stochastic(&start, target, schedule, kind, leak_tol)
    } else {
        let grid = pushforward_deterministic(lo, hi, n, target, schedule, kind)?;
        if grid.mass_in_window < 1.0 - leak_tol {
            return Err(DensityError::MassLeak {
                t: 1,
                mass: grid.mass_in_window,
                leak_tol,
            });
        }
        Ok(grid)
    }
}

/// A normal law `N(mean, var)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw {
    pub mean: f64,
    pub var: f64,
}

impl GaussianLaw {
    pub fn pdf(&self, x: f64) -> f64 {
        let sd = self.var.sqrt();
        normal_pdf((x - self.mean) / sd) / sd
    }

    pub fn cdf(&self, x: f64) -> f64 {
        normal_cdf((x - self.mean) / self.var.sqrt())
    }
}

/// Law of `Y_1` when the target is a single normal `N(m0, v0)` (an atom when
/// `v0 = 0`). Every update rule is then affine-Gaussian, so means and
/// variances compose in closed form.
pub fn gaussian_chain(m0: f64, v0: f64, schedule: &Schedule, kind: SamplerKind) -> GaussianLaw {
    let mut law = GaussianLaw {
        mean: 0.0,
        var: 1.0,
    };
    for t in (2..=schedule.steps()).rev() {
        let c = schedule.coeffs(t);
        let ab = c.level.alpha_bar;
        let big_v = ab * v0 + c.level.one_minus;
        // Each map is x ↦ (x + k s(x))/√α with s(x) = −(x − √ᾱ m0)/V.
        let (k, noise_sd) = match kind {
            SamplerKind::OdePlain => (c.beta / 2.0, 0.0),
            SamplerKind::OdeAccel => (c.beta / 2.0 + c.beta * c.beta / (8.0 * big_v), 0.0),
            SamplerKind::DdpmPlain => (c.beta, c.sigma()),
            SamplerKind::DdpmAccel => (c.beta, c.sigma() * (1.0 - c.beta / (2.0 * big_v))),
        };
        let sa = c.alpha.sqrt();
        let a = (1.0 - k / big_v) / sa;
        let b = k * ab.sqrt() * m0 / (big_v * sa);
        law = GaussianLaw {
            mean: a * law.mean + b,
            var: a * a * law.var + noise_sd * noise_sd,
        };
    }
    law
}

/// Exact TV distance between two normal laws in one dimension.
pub fn gaussian_tv(p: GaussianLaw, q: GaussianLaw) -> f64 {
    // TV = Σ over the regions where p > q of (P − Q); the regions are
    // delimited by the (at most two) crossing points of the densities.
    let (m1, v1, m2, v2) = (p.mean, p.var, q.mean, q.var);
    let mut roots = Vec::new();
    if (v1 - v2).abs() <= 1e-15 * v1.max(v2) {
        if m1 == m2 {
            return 0.0;
        }
        roots.push(0.5 * (m1 + m2));
    } else {
        // log p − log q = A x² + B x + C.
        let a = 0.5 / v2 - 0.5 / v1;
        let b = m1 / v1 - m2 / v2;
        let c = 0.5 * (m2 * m2 / v2 - m1 * m1 / v1) + 0.5 * (v2 / v1).ln();
        let disc = b * b - 4.0 * a * c;
        if disc > 0.0 {
            let sq = disc.sqrt();
            let q_ = -0.5 * (b + b.signum() * sq);
            let mut r = vec![q_ / a, c / q_];
            r.sort_by(f64::total_cmp);
            roots.extend(r);
        }
    }
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(roots);
    edges.push(f64::INFINITY);
    let mass = |law: GaussianLaw, a: f64, b: f64| -> f64 {
        let sd = law.var.sqrt();
        let za = (a - law.mean) / sd;
        let zb = (b - law.mean) / sd;
        // Use whichever tail keeps the difference well conditioned.
        if za > 0.0 {
            normal_sf(za) - normal_sf(zb)
        } else {
            normal_cdf(zb) - normal_cdf(za)
        }
    };
    let mut tv = 0.0;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = if a.is_finite() && b.is_finite() {
            0.5 * (a + b)
        } else if a.is_finite() {
            a + 1.0
        } else if b.is_finite() {
            b - 1.0
        } else {
            0.0
        };
        if p.pdf(mid) > q.pdf(mid) {
            tv += mass(p, a, b) - mass(q, a, b);
        }
    }
    tv.clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov statistic against a CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the KS statistic, `1.63/√n`.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

/// Normalized histogram on `[lo, hi]` with the raw counts retained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub n_total: usize,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn bin_center(&self, b: usize) -> f64 {
        self.lo + (b as f64 + 0.5) * self.bin_width()
    }

    /// Poisson standard error of each bin's density.
    pub fn std_errors(&self) -> Vec<f64> {
        let scale = 1.0 / (self.n_total as f64 * self.bin_width());
        self.counts
            .iter()
            .map(|&c| (c as f64).sqrt() * scale)
            .collect()
    }

    /// Samples that fell outside the window.
    pub fn outside(&self) -> usize {
        self.n_total - self.counts.iter().sum::<u64>() as usize
    }
}

pub const MIN_HISTOGRAM_SAMPLES: usize = 10_000;

/// Histogram density estimate of one-dimensional samples (or one
/// coordinate of higher-dimensional samples).
pub fn histogram_density(
    samples: &[f64],
    bins: usize,
    lo: f64,
    hi: f64,
) -> Result<Histogram, DensityError> {
    if samples.len() < MIN_HISTOGRAM_SAMPLES {
        return Err(DensityError::TooFewSamples {
            need: MIN_HISTOGRAM_SAMPLES,
            got: samples.len(),
        });
    }
    if !(lo < hi) || bins == 0 {
        return Err(DensityError::BadWindow { lo, hi });
    }
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in samples {
        if x >= lo && x <= hi {
            let b = (((x - lo) / w) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(DensityError::EmptyWindow);
    }
    let n = samples.len();
    let density = counts.iter().map(|&c| c as f64 / (n as f64 * w)).collect();
    Ok(Histogram {
        lo,
        hi,
        counts,
        n_total: n,
        density,
    })
}

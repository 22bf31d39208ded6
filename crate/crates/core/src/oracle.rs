//! Brute-force Monte Carlo checks of the closed-form conditional moments.
//!
//! Conditional expectations given `X_t = x` are estimated by self-normalized
//! importance sampling with the data distribution as proposal: draw
//! `X_0 ~ p_data` and weight by the forward likelihood
//! `exp(−‖x − √ᾱ X_0‖²/(2(1−ᾱ)))`. Standard errors use the delta method.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::moments::{moments, MomentBundle};
use crate::rng::stream_rng;
use crate::schedule::Schedule;
use crate::target::{MixtureTarget, Samples};

pub const MIN_DRAWS: usize = 10_000;
pub const MIN_TV_SAMPLES: usize = 100_000;
const BATCH: usize = 8192;
/// Constants of the moment envelopes in the soft tail check.
pub const C6: f64 = 4.0;
pub const C5_BAR: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("need at least {need} draws (got {got})")]
    TooFewDraws { need: usize, got: usize },
    #[error("dimension mismatch: target d = {target}, point d = {point}")]
    Dim { target: usize, point: usize },
    #[error("bins and window must be non-empty")]
    BadBins,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Functional {
    /// `g_t(x) = E[x − √ᾱ X_0 | X_t = x]`.
    G,
    /// `s_t(x) = −g_t(x)/(1−ᾱ)`.
    Score,
    /// `E[W̄ W̄ᵀ | X_t = x]`.
    NoiseCov,
    /// The third-moment correction of the accelerated deterministic sampler.
    WCorr,
    /// `E[‖√ᾱ X_0 − x‖^p | X_t = x]`.
    MomentP(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub value: DMatrix<f64>,
    pub std_error: DMatrix<f64>,
    pub n_effective: f64,
    pub n: usize,
}

impl OracleEstimate {
    /// `n_effective ≥ 0.1·n`.
    pub fn reliable(&self) -> bool {
        self.n_effective >= 0.1 * self.n as f64
    }

    /// Largest elementwise `|closed − estimate| / SE`. Exact agreement with a
    /// zero standard error counts as 0.
    pub fn max_z(&self, closed: &DMatrix<f64>) -> f64 {
        let scale = closed.amax().max(1.0);
        closed
            .iter()
            .zip(self.value.iter())
            .zip(self.std_error.iter())
            .map(|((c, v), se)| {
                let diff = (c - v).abs();
                if diff <= 1e-12 * scale {
                    0.0
                } else if *se > 0.0 {
                    diff / se
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Weighted prior draws for one `(t, x)`.
struct Draws {
    /// Normalized importance weights.
    weights: Vec<f64>,
    /// `W̄_i = (x − √ᾱ X_0^i)/√(1−ᾱ)`, row-major.
    noise: Vec<f64>,
    dim: usize,
    one_minus: f64,
}

impl Draws {
    fn new(
        target: &MixtureTarget,
        schedule: &Schedule,
        t: usize,
        x: &[f64],
        n: usize,
        seed: u64,
    ) -> Result<Self, OracleError> {
        if n < MIN_DRAWS {
            return Err(OracleError::TooFewDraws {
                need: MIN_DRAWS,
                got: n,
            });
        }
        if x.len() != target.dim() {
            return Err(OracleError::Dim {
                target: target.dim(),
                point: x.len(),
            });
        }
        let d = target.dim();
        let level = schedule.level(t);
        let sa = level.alpha_bar.sqrt();
        let sv = level.one_minus.sqrt();
        let batches: Vec<(Vec<f64>, Vec<f64>)> = (0..n.div_ceil(BATCH))
            .into_par_iter()
            .map(|b| {
                let count = BATCH.min(n - b * BATCH);
                let mut rng = stream_rng(seed, b as u64, 0);
                let x0 = target.sample_data(&mut rng, count);
                let mut logw = Vec::with_capacity(count);
                let mut noise = Vec::with_capacity(count * d);
                for row in x0.rows() {
                    let mut sq = 0.0;
                    for k in 0..d {
                        let r = x[k] - sa * row[k];
                        sq += r * r;
                        noise.push(r / sv);
                    }
                    logw.push(-0.5 * sq / level.one_minus);
                }
                (logw, noise)
            })
            .collect();
        let mut logw = Vec::with_capacity(n);
        let mut noise = Vec::with_capacity(n * d);
        for (l, z) in batches {
            logw.extend(l);
            noise.extend(z);
        }
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self {
            weights,
            noise,
            dim: d,
            one_minus: level.one_minus,
        })
    }

    fn n_effective(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.noise[i * self.dim..(i + 1) * self.dim]
    }

    /// Self-normalized mean of `f` with its delta-method standard error.
    /// `f` writes `m` values per draw.
    fn estimate(&self, m: usize, f: impl Fn(&[f64], &mut [f64])) -> (Vec<f64>, Vec<f64>) {
        let n = self.weights.len();
        let mut vals = vec![0.0; n * m];
        for i in 0..n {
            f(self.row(i), &mut vals[i * m..(i + 1) * m]);
        }
        let mut mean = vec![0.0; m];
        for i in 0..n {
            for k in 0..m {
                mean[k] += self.weights[i] * vals[i * m + k];
            }
        }
        let mut var = vec![0.0; m];
        for i in 0..n {
            let w2 = self.weights[i] * self.weights[i];
            for k in 0..m {
                let dv = vals[i * m + k] - mean[k];
                var[k] += w2 * dv * dv;
            }
        }
        (mean, var.into_iter().map(f64::sqrt).collect())
    }

    fn functional(&self, func: Functional) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.dim;
        let v = self.one_minus;
        let sv = v.sqrt();
        let col = |m: Vec<f64>| DMatrix::from_column_slice(m.len(), 1, &m);
        match func {
            Functional::G => {
                let (m, se) = self.estimate(d, |w, out| {
                    for k in 0..d {
                        out[k] = sv * w[k];
                    }
                });
                (col(m), col(se))
            }
            Functional::Score => {
                let (m, se) = self.estimate(d, |w, out| {
                    for k in 0..d {
                        out[k] = -w[k] / sv;
                    }
                });
                (col(m), col(se))
            }
            Functional::NoiseCov => {
                let (m, se) = self.estimate(d * d, |w, out| {
                    for i in 0..d {
                        for j in 0..d {
                            out[i * d + j] = w[i] * w[j];
                        }
                    }
                });
                (
                    DMatrix::from_row_slice(d, d, &m),
                    DMatrix::from_row_slice(d, d, &se),
                )
            }
            Functional::MomentP(p) => {
                let (m, se) = self.estimate(1, |w, out| {
                    let norm = w.iter().map(|e| e * e).sum::<f64>().sqrt() * sv;
                    out[0] = norm.powf(p);
                });
                (col(m), col(se))
            }
            Functional::WCorr => self.w_corr(),
        }
    }

    /// Plug-in estimate of
    /// `(1/v)(E[‖W‖²W]/√v + E[‖W‖²] s + E[WWᵀ] s)` with `s = −E[W]/√v`.
    /// Its standard error comes from the influence function, which adds the
    /// sensitivity to the estimated `s`.
    fn w_corr(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.dim;
        let v = self.one_minus;
        let sv = v.sqrt();
        let (mean_w, _) = self.estimate(d, |w, out| out.copy_from_slice(w));
        let s: Vec<f64> = mean_w.iter().map(|m| -m / sv).collect();
        let (e2, _) = self.estimate(1, |w, out| out[0] = w.iter().map(|e| e * e).sum());
        let (second, _) = self.estimate(d * d, |w, out| {
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] = w[i] * w[j];
                }
            }
        });
        // ∂w/∂s = (E‖W‖² I + E[WWᵀ])/v; ∂s/∂W = −I/√v.
        let sens = |i: usize, j: usize| {
            let diag = if i == j { e2[0] } else { 0.0 };
            (diag + second[i * d + j]) / v
        };
        let (third, _) = self.estimate(d, |w, out| {
            let n2: f64 = w.iter().map(|e| e * e).sum();
            for k in 0..d {
                out[k] = n2 * w[k];
            }
        });
        let plug: Vec<f64> = (0..d)
            .map(|k| {
                let ms: f64 = (0..d).map(|j| second[k * d + j] * s[j]).sum();
                (third[k] / sv + e2[0] * s[k] + ms) / v
            })
            .collect();
        // Only deviations of the influence values enter the error, so their
        // constant offset from the plug-in value is irrelevant.
        let (_, se) = self.estimate(d, |w, out| {
            let n2: f64 = w.iter().map(|e| e * e).sum();
            let ws: f64 = w.iter().zip(&s).map(|(a, b)| a * b).sum();
            for k in 0..d {
                let direct = (n2 * w[k] / sv + n2 * s[k] + w[k] * ws) / v;
                let through_s: f64 = (0..d).map(|j| sens(k, j) * (-w[j] / sv)).sum();
                out[k] = direct + through_s;
            }
        });
        (
            DMatrix::from_column_slice(d, 1, &plug),
            DMatrix::from_column_slice(d, 1, &se),
        )
    }
}

/// Monte Carlo estimate of one conditional functional at `(t, x)`.
pub fn mc_conditional(
    target: &MixtureTarget,
    schedule: &Schedule,
    t: usize,
    x: &[f64],
    functional: Functional,
    n: usize,
    seed: u64,
) -> Result<OracleEstimate, OracleError> {
    let draws = Draws::new(target, schedule, t, x, n, seed)?;
    let (value, std_error) = draws.functional(functional);
    Ok(OracleEstimate {
        value,
        std_error,
        n_effective: draws.n_effective(),
        n,
    })
}

/// All functionals from one set of draws.
pub fn mc_all(
    target: &MixtureTarget,
    schedule: &Schedule,
    t: usize,
    x: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<(Functional, OracleEstimate)>, OracleError> {
    let draws = Draws::new(target, schedule, t, x, n, seed)?;
    let n_eff = draws.n_effective();
    Ok([
        Functional::G,
        Functional::Score,
        Functional::NoiseCov,
        Functional::WCorr,
    ]
    .into_iter()
    .map(|f| {
        let (value, std_error) = draws.functional(f);
        (
            f,
            OracleEstimate {
                value,
                std_error,
                n_effective: n_eff,
                n,
            },
        )
    })
    .collect())
}

/// The closed-form counterpart of a functional (moment functionals have none).
pub fn closed_form(bundle: &MomentBundle, functional: Functional) -> Option<DMatrix<f64>> {
    let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    match functional {
        Functional::G => Some(col(&bundle.g)),
        Functional::Score => Some(col(&bundle.score)),
        Functional::NoiseCov => Some(bundle.noise_cov.clone()),
        Functional::WCorr => Some(col(&bundle.w_corr)),
        Functional::MomentP(_) => None,
    }
}

fn functional_name(f: Functional) -> String {
    match f {
        Functional::G => "G".into(),
        Functional::Score => "SCORE".into(),
        Functional::NoiseCov => "NOISE_COV".into(),
        Functional::WCorr => "W_CORR".into(),
        Functional::MomentP(p) => format!("MOMENT_P({p})"),
    }
}

/// One `(t, x)` comparison in the oracle gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatePoint {
    pub t: usize,
    pub x: Vec<f64>,
    pub n_effective: f64,
    /// `(functional, max |z|)`.
    pub z_scores: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub points: Vec<GatePoint>,
    /// Pairs drawn but skipped because `n_effective < 0.1·n`.
    pub redrawn: usize,
    pub z_limit: f64,
    /// Per functional: worst `|z|` over all points.
    pub max_z: Vec<(String, f64)>,
    pub passed: bool,
}

impl GateReport {
    pub fn first_failure(&self) -> Option<String> {
        self.points.iter().find_map(|p| {
            p.z_scores
                .iter()
                .find(|(_, z)| *z > self.z_limit)
                .map(|(f, z)| format!("{f} at t={} x={:?}: |z| = {z:.2}", p.t, p.x))
        })
    }
}

/// Compares closed forms with the oracle at `pairs` random `(t, x)` with
/// `t` uniform on `1..=T` and `x ~ q_t`. Pairs whose importance sampler
/// collapses (`n_effective < 0.1·n`) are redrawn and counted.
pub fn oracle_gate(
    target: &MixtureTarget,
    schedule: &Schedule,
    pairs: usize,
    n: usize,
    seed: u64,
    z_limit: f64,
) -> Result<GateReport, OracleError> {
    let mut rng = stream_rng(seed, u64::MAX, 0);
    let mut points = Vec::with_capacity(pairs);
    let mut redrawn = 0;
    let mut attempt = 0u64;
    while points.len() < pairs {
        attempt += 1;
        let t = rng.random_range(1..=schedule.steps());
        let level = schedule.level(t);
        let x0 = target.sample_data(&mut rng, 1);
        let x: Vec<f64> = x0
            .row(0)
            .iter()
            .map(|v| {
                level.alpha_bar.sqrt() * v
                    + level.one_minus.sqrt() * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let est = mc_all(
            target,
            schedule,
            t,
            &x,
            n,
            seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )?;
        let n_eff = est[0].1.n_effective;
        if !est[0].1.reliable() {
            redrawn += 1;
            log::info!(
                "oracle gate: redrawing t={t} (n_effective {n_eff:.0} < {})",
                n / 10
            );
            continue;
        }
        let bundle = moments(target, schedule, t, &x);
        let z_scores = est
            .iter()
            .map(|(f, e)| {
                let closed = closed_form(&bundle, *f).expect("closed form exists");
                (functional_name(*f), e.max_z(&closed))
            })
            .collect();
        points.push(GatePoint {
            t,
            x,
            n_effective: n_eff,
            z_scores,
        });
    }
    let names: Vec<String> = points[0].z_scores.iter().map(|(f, _)| f.clone()).collect();
    let max_z: Vec<(String, f64)> = names
        .iter()
        .enumerate()
        .map(|(k, f)| {
            (
                f.clone(),
                points.iter().map(|p| p.z_scores[k].1).fold(0.0, f64::max),
            )
        })
        .collect();
    let passed = max_z.iter().all(|(_, z)| *z <= z_limit);
    Ok(GateReport {
        points,
        redrawn,
        z_limit,
        max_z,
        passed,
    })
}

/// Soft tail-moment check at one `(t, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub t: usize,
    /// `−ln q_t(x) ≤ c6·d·ln T`.
    pub typical: bool,
    pub first_moment: f64,
    pub second_moment: f64,
    pub first_bound: f64,
    pub second_bound: f64,
    pub within: bool,
}

/// Compares `E[‖√ᾱ X_0 − x‖^p | X_t = x]`, `p = 1, 2`, with the envelopes
/// `6c̄₅√(d(1−ᾱ)ln T)` and `30c̄₅²d(1−ᾱ)ln T`. A flag, not an assertion.
pub fn tail_moment_check(
    target: &MixtureTarget,
    schedule: &Schedule,
    t: usize,
    x: &[f64],
    n: usize,
    seed: u64,
) -> Result<TailCheck, OracleError> {
    let draws = Draws::new(target, schedule, t, x, n, seed)?;
    let d = target.dim() as f64;
    let ln_t = (schedule.steps() as f64).ln();
    let v = schedule.level(t).one_minus;
    let first = draws.functional(Functional::MomentP(1.0)).0[0];
    let second = draws.functional(Functional::MomentP(2.0)).0[0];
    let log_q = target.density_at_level(schedule.level(t), x).ln();
    let first_bound = 6.0 * C5_BAR * (d * v * ln_t).sqrt();
    let second_bound = 30.0 * C5_BAR * C5_BAR * d * v * ln_t;
    Ok(TailCheck {
        t,
        typical: -log_q <= C6 * d * ln_t,
        first_moment: first,
        second_moment: second,
        first_bound,
        second_bound,
        within: first.is_finite()
            && second.is_finite()
            && first <= first_bound
            && second <= second_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleTv {
    pub estimate: f64,
    /// Expected upward bias of the binned estimate from sampling noise,
    /// `½ Σ_b √(2 q_b (1 − q_b)/(π n))`.
    pub bias_bound: f64,
    /// Binomial standard error of the estimate.
    pub std_error: f64,
}

/// Binned TV between samples and a density on the box `[lo, hi]^d` with
/// `bins` cells per axis. Bin probabilities of `q` use a 4-point midpoint
/// rule per axis.
pub fn mc_sample_tv(
    samples: &Samples,
    q_density: impl Fn(&[f64]) -> f64 + Sync,
    bins: usize,
    lo: f64,
    hi: f64,
) -> Result<SampleTv, OracleError> {
    let n = samples.len();
    if n < MIN_TV_SAMPLES {
        return Err(OracleError::TooFewDraws {
            need: MIN_TV_SAMPLES,
            got: n,
        });
    }
    if bins == 0 || !(lo < hi) {
        return Err(OracleError::BadBins);
    }
    let d = samples.dim;
    let total = bins.pow(d as u32);
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; total];
    for r in samples.rows() {
        let mut idx = 0;
        let mut inside = true;
        for &v in r {
            if !(v >= lo && v <= hi) {
                inside = false;
                break;
            }
            idx = idx * bins + (((v - lo) / w) as usize).min(bins - 1);
        }
        if inside {
            counts[idx] += 1;
        }
    }
    let sub = 4usize;
    let q_bins: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|b| {
            let mut cell = vec![0usize; d];
            let mut rem = b;
            for k in (0..d).rev() {
                cell[k] = rem % bins;
                rem /= bins;
            }
            let mut acc = 0.0;
            let mut pt = vec![0.0; d];
            for s in 0..sub.pow(d as u32) {
                let mut r = s;
                for k in (0..d).rev() {
                    let j = r % sub;
                    r /= sub;
                    pt[k] = lo + (cell[k] as f64 + (j as f64 + 0.5) / sub as f64) * w;
                }
                acc += q_density(&pt);
            }
            acc * w.powi(d as i32) / sub.pow(d as u32) as f64
        })
        .collect();
    let nf = n as f64;
    let mut estimate = 0.0;
    let mut bias = 0.0;
    let mut var = 0.0;
    for (c, q) in counts.iter().zip(&q_bins) {
        let p = *c as f64 / nf;
        estimate += 0.5 * (p - q).abs();
        let qq = q.clamp(0.0, 1.0);
        bias += 0.5 * (2.0 * qq * (1.0 - qq) / (std::f64::consts::PI * nf)).sqrt();
        var += 0.25 * qq * (1.0 - qq) / nf;
    }
    // Mass outside the box is one more cell.
    let out_p = 1.0 - counts.iter().sum::<u64>() as f64 / nf;
    let out_q = (1.0 - q_bins.iter().sum::<f64>()).max(0.0);
    estimate += 0.5 * (out_p - out_q).abs();
    Ok(SampleTv {
        estimate,
        bias_bound: bias,
        std_error: var.sqrt(),
    })
}

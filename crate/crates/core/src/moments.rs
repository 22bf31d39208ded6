//! Closed-form conditional quantities of the forward process.
//!
//! Conditioned on component `k`, `X_t ~ N(√ᾱ μ_k, V_k)` with
//! `V_k = ᾱ Σ_k + (1−ᾱ) I`. Gaussian conditioning then gives the noise
//! `W̄ = (X_t − √ᾱ X_0)/√(1−ᾱ)` given `X_t = x` and `k` as `N(a_k, B_k)` with
//!
//! ```text
//! a_k = √(1−ᾱ) V_k⁻¹ (x − √ᾱ μ_k)
//! B_k = ᾱ (Σ_k − ᾱ Σ_k V_k⁻¹ Σ_k) / (1−ᾱ)
//! ```
//!
//! `B_k` does not depend on `x`, so everything that does not depend on `x`
//! is precomputed once per noise level in [`Posterior`]. Posterior component
//! weights are handled in log space with max-subtraction.

use nalgebra::{DMatrix, DVector};

use crate::schedule::{NoiseLevel, Schedule};
use crate::target::MixtureTarget;

#[derive(Debug, Clone)]
struct ComponentCache {
    log_norm: f64,
    /// `√ᾱ μ_k`.
    center: Vec<f64>,
    /// `V_k⁻¹`, row-major.
    v_inv: Vec<f64>,
    /// `B_k`, row-major.
    b: Vec<f64>,
    tr_b: f64,
}

/// Per-noise-level posterior structure of a mixture target.
#[derive(Debug, Clone)]
pub struct Posterior {
    dim: usize,
    level: NoiseLevel,
    comps: Vec<ComponentCache>,
}

/// All exact conditional quantities at one `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentBundle {
    /// Step index, or 0 when evaluated at a bare noise level.
    pub t: usize,
    pub x: DVector<f64>,
    /// Marginal density `q_t(x)`.
    pub density: f64,
    pub posterior_weights: Vec<f64>,
    /// `g_t(x) = E[x − √ᾱ X_0 | X_t = x]`.
    pub g: DVector<f64>,
    /// `s_t(x) = −g_t(x)/(1−ᾱ_t)`.
    pub score: DVector<f64>,
    /// `E[W̄ W̄ᵀ | X_t = x]`.
    pub noise_cov: DMatrix<f64>,
    /// `J_t(x) = ∂g_t/∂x = I + (1−ᾱ) s sᵀ − E[W̄ W̄ᵀ | X_t = x]`.
    pub jac: DMatrix<f64>,
    /// Third-moment correction used by the accelerated deterministic sampler:
    /// `E[‖W̄‖²(W̄/√(1−ᾱ) + s) + W̄W̄ᵀ s | X_t = x] / (1−ᾱ)`.
    pub w_corr: DVector<f64>,
}

/// Scalar moments for one-dimensional targets (allocation-free hot path).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments1d {
    pub density: f64,
    pub score: f64,
    pub noise_cov: f64,
    pub jac: f64,
    pub w_corr: f64,
}

fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for i in 0..d {
        out[i] = (0..d).map(|j| m[i * d + j] * v[j]).sum();
    }
}

impl Posterior {
    pub fn new(target: &MixtureTarget, level: NoiseLevel) -> Self {
        let d = target.dim();
        let ab = level.alpha_bar;
        let v = level.one_minus;
        assert!(v > 0.0, "noise level must satisfy 1 - alpha_bar > 0");
        let comps = target
            .components()
            .iter()
            .map(|c| {
                let eye = DMatrix::<f64>::identity(d, d);
                let vk = &c.cov * ab + &eye * v;
                let chol = vk
                    .clone()
                    .cholesky()
                    .expect("alpha_bar Σ + (1 − alpha_bar) I is positive definite");
                let v_inv = chol.inverse();
                let log_det: f64 = chol.l().diagonal().iter().map(|l| 2.0 * l.ln()).sum();
                let log_norm =
                    c.weight.ln() - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
                let cond = &c.cov - (&c.cov * &v_inv * &c.cov) * ab;
                let b = cond * (ab / v);
                let b = (&b + b.transpose()) * 0.5;
                ComponentCache {
                    log_norm,
                    center: (&c.mean * ab.sqrt()).iter().copied().collect(),
                    v_inv: v_inv.transpose().iter().copied().collect(),
                    tr_b: b.trace(),
                    b: b.transpose().iter().copied().collect(),
                }
            })
            .collect();
        Self {
            dim: d,
            level,
            comps,
        }
    }

    pub fn at_step(target: &MixtureTarget, schedule: &Schedule, t: usize) -> Self {
        Self::new(target, schedule.level(t))
    }

    pub fn level(&self) -> NoiseLevel {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `log q(x)` at this noise level.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut r = vec![0.0; d];
        let mut u = vec![0.0; d];
        let logs: Vec<f64> = self
            .comps
            .iter()
            .map(|c| {
                for i in 0..d {
                    r[i] = x[i] - c.center[i];
                }
                mat_vec(&c.v_inv, &r, &mut u);
                let quad: f64 = r.iter().zip(&u).map(|(a, b)| a * b).sum();
                c.log_norm - 0.5 * quad
            })
            .collect();
        log_sum_exp(&logs)
    }

    /// Posterior component probabilities `P(k | X_t = x)`.
    pub fn component_weights(&self, x: &[f64]) -> Vec<f64> {
        self.eval(x).posterior_weights
    }

    /// Full moment bundle at `x`.
    pub fn eval(&self, x: &[f64]) -> MomentBundle {
        assert_eq!(x.len(), self.dim, "dimension mismatch");
        let d = self.dim;
        let v = self.level.one_minus;
        let sv = v.sqrt();
        let k = self.comps.len();

        let mut a = vec![0.0; k * d];
        let mut logs = Vec::with_capacity(k);
        let mut r = vec![0.0; d];
        for (ci, c) in self.comps.iter().enumerate() {
            for i in 0..d {
                r[i] = x[i] - c.center[i];
            }
            let ak = &mut a[ci * d..(ci + 1) * d];
            mat_vec(&c.v_inv, &r, ak);
            let quad: f64 = r.iter().zip(ak.iter()).map(|(p, q)| p * q).sum();
            logs.push(c.log_norm - 0.5 * quad);
            ak.iter_mut().for_each(|e| *e *= sv);
        }
        let lse = log_sum_exp(&logs);
        let weights: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();

        let mut mean_w = DVector::zeros(d);
        let mut second = DMatrix::zeros(d, d);
        let mut e_norm2 = 0.0;
        let mut e_norm2_w = DVector::zeros(d);
        let mut ba = vec![0.0; d];
        for (ci, c) in self.comps.iter().enumerate() {
            let wk = weights[ci];
            let ak = &a[ci * d..(ci + 1) * d];
            let norm2 = c.tr_b + ak.iter().map(|e| e * e).sum::<f64>();
            mat_vec(&c.b, ak, &mut ba);
            e_norm2 += wk * norm2;
            for i in 0..d {
                mean_w[i] += wk * ak[i];
                e_norm2_w[i] += wk * (norm2 * ak[i] + 2.0 * ba[i]);
                for j in 0..d {
                    second[(i, j)] += wk * (ak[i] * ak[j] + c.b[i * d + j]);
                }
            }
        }
        let g = &mean_w * sv;
        let score = &mean_w * (-1.0 / sv);
        let jac = DMatrix::identity(d, d) + &score * score.transpose() * v - &second;
        let m_s = &second * &score;
        let w_corr = (e_norm2_w / sv + &score * e_norm2 + m_s) / v;

        MomentBundle {
            t: 0,
            x: DVector::from_column_slice(x),
            density: lse.exp(),
            posterior_weights: weights,
            g,
            score,
            noise_cov: second,
            jac,
            w_corr,
        }
    }

    /// Scalar version of [`Posterior::eval`] for `d = 1`.
    pub fn eval_1d(&self, x: f64) -> Moments1d {
        debug_assert_eq!(self.dim, 1);
        let v = self.level.one_minus;
        let sv = v.sqrt();
        let mut max_log = f64::NEG_INFINITY;
        for c in &self.comps {
            let r = x - c.center[0];
            let l = c.log_norm - 0.5 * r * r * c.v_inv[0];
            max_log = max_log.max(l);
        }
        let (mut z, mut m1, mut m2, mut e2, mut e3) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for c in &self.comps {
            let r = x - c.center[0];
            let u = r * c.v_inv[0];
            let w = (c.log_norm - 0.5 * r * u - max_log).exp();
            let a = sv * u;
            let b = c.b[0];
            let n2 = b + a * a;
            z += w;
            m1 += w * a;
            m2 += w * n2;
            e2 += w * n2;
            e3 += w * (n2 * a + 2.0 * b * a);
        }
        let (m1, m2, e2, e3) = (m1 / z, m2 / z, e2 / z, e3 / z);
        let score = -m1 / sv;
        Moments1d {
            density: (max_log + z.ln()).exp(),
            score,
            noise_cov: m2,
            jac: 1.0 + v * score * score - m2,
            w_corr: (e3 / sv + e2 * score + m2 * score) / v,
        }
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Exact marginal density `q_t(x)`.
pub fn marginal_density(target: &MixtureTarget, schedule: &Schedule, t: usize, x: &[f64]) -> f64 {
    Posterior::at_step(target, schedule, t).log_density(x).exp()
}

/// Moment bundle at step `t`.
pub fn moments(target: &MixtureTarget, schedule: &Schedule, t: usize, x: &[f64]) -> MomentBundle {
    let mut m = Posterior::at_step(target, schedule, t).eval(x);
    m.t = t;
    m
}

/// `v_t(x, z) = E[W̄ W̄ᵀ | X_t = x] z`.
pub fn v_apply(
    target: &MixtureTarget,
    schedule: &Schedule,
    t: usize,
    x: &[f64],
    z: &[f64],
) -> DVector<f64> {
    let m = moments(target, schedule, t, x);
    &m.noise_cov * DVector::from_column_slice(z)
}

/// Default finite-difference step `10⁻⁵·(1 + ‖x‖∞)`.
pub fn default_fd_step(x: &[f64]) -> f64 {
    1e-5 * (1.0 + x.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// Central-difference Jacobian of `g_t` at `x`.
pub fn score_jacobian_fd(
    target: &MixtureTarget,
    schedule: &Schedule,
    t: usize,
    x: &[f64],
    h: f64,
) -> DMatrix<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let post = Posterior::at_step(target, schedule, t);
    let d = x.len();
    let mut jac = DMatrix::zeros(d, d);
    let mut xp = x.to_vec();
    for j in 0..d {
        xp[j] = x[j] + h;
        let gp = post.eval(&xp).g;
        xp[j] = x[j] - h;
        let gm = post.eval(&xp).g;
        xp[j] = x[j];
        for i in 0..d {
            jac[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    jac
}

//! Target data distributions: finite mixtures of Gaussians and point atoms.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedule::{NoiseLevel, Schedule};

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("target has no components")]
    Empty,
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("component {index}: {what} has length {got}, expected {expected}")]
    Shape {
        index: usize,
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("component {index}: weight {weight} is not positive")]
    BadWeight { index: usize, weight: f64 },
    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("component {index}: covariance is not symmetric positive semidefinite")]
    NotPsd { index: usize },
    #[error("component {index}: atom at distance {norm} exceeds support radius {radius}")]
    OutsideSupport {
        index: usize,
        norm: f64,
        radius: f64,
    },
    #[error("support radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("failed to parse target JSON: {0}")]
    Parse(serde_json::Error),
    #[error("failed to read target file {path}: {error}")]
    Io { path: String, error: std::io::Error },
}

/// One mixture component. A zero covariance encodes a point atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    sqrt_cov: DMatrix<f64>,
}

impl Component {
    pub fn is_atom(&self) -> bool {
        self.cov.iter().all(|&c| c == 0.0)
    }

    /// Symmetric square root of the covariance, used for sampling.
    pub fn sqrt_cov(&self) -> &DMatrix<f64> {
        &self.sqrt_cov
    }
}

/// Weighted mixture of Gaussian components with a declared support radius.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTarget {
    dim: usize,
    components: Vec<Component>,
    support_radius: f64,
    /// Exponent in `R = T^{c_R}`; carried as metadata only.
    pub radius_exponent: Option<f64>,
}

const WEIGHT_SUM_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-12;

fn psd_sqrt(cov: &DMatrix<f64>, index: usize) -> Result<DMatrix<f64>, TargetError> {
    let n = cov.nrows();
    let scale = cov.amax().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > PSD_TOL * scale {
                return Err(TargetError::NotPsd { index });
            }
        }
    }
    if cov.iter().all(|&c| c == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    let eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.iter().any(|&l| l < -PSD_TOL * scale) {
        return Err(TargetError::NotPsd { index });
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

impl MixtureTarget {
    pub fn new(
        dim: usize,
        parts: Vec<(f64, DVector<f64>, DMatrix<f64>)>,
        support_radius: f64,
    ) -> Result<Self, TargetError> {
        if dim == 0 {
            return Err(TargetError::ZeroDim);
        }
        if parts.is_empty() {
            return Err(TargetError::Empty);
        }
        if !(support_radius > 0.0) {
            return Err(TargetError::BadRadius(support_radius));
        }
        let mut components = Vec::with_capacity(parts.len());
        let mut total = 0.0;
        for (index, (weight, mean, cov)) in parts.into_iter().enumerate() {
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(TargetError::BadWeight { index, weight });
            }
            if mean.len() != dim {
                return Err(TargetError::Shape {
                    index,
                    what: "mean",
                    got: mean.len(),
                    expected: dim,
                });
            }
            if cov.nrows() != dim || cov.ncols() != dim {
                return Err(TargetError::Shape {
                    index,
                    what: "covariance",
                    got: cov.len(),
                    expected: dim * dim,
                });
            }
            let sqrt_cov = psd_sqrt(&cov, index)?;
            total += weight;
            components.push(Component {
                weight,
                mean,
                cov,
                sqrt_cov,
            });
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(TargetError::WeightSum(total));
        }
        if components.iter().all(Component::is_atom) {
            for (index, c) in components.iter().enumerate() {
                let norm = c.mean.norm();
                if norm > support_radius {
                    return Err(TargetError::OutsideSupport {
                        index,
                        norm,
                        radius: support_radius,
                    });
                }
            }
        }
        Ok(Self {
            dim,
            components,
            support_radius,
            radius_exponent: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Point atom at `x` in one dimension.
    pub fn point_atom_1d(x: f64) -> Self {
        Self::new(
            1,
            vec![(1.0, DVector::from_element(1, x), DMatrix::zeros(1, 1))],
            x.abs().max(1.0),
        )
        .expect("valid atom")
    }

    /// Single Gaussian `N(mean, var)` in one dimension.
    pub fn gaussian_1d(mean: f64, var: f64) -> Self {
        Self::new(
            1,
            vec![(
                1.0,
                DVector::from_element(1, mean),
                DMatrix::from_element(1, 1, var),
            )],
            mean.abs() + 10.0 * var.sqrt().max(1.0),
        )
        .expect("valid gaussian")
    }

    /// Standard normal in `dim` dimensions (the forward process fixed point).
    pub fn standard_normal(dim: usize) -> Self {
        Self::new(
            dim,
            vec![(1.0, DVector::zeros(dim), DMatrix::identity(dim, dim))],
            10.0 * (dim as f64).sqrt(),
        )
        .expect("valid gaussian")
    }

    /// Equal-weight mixture of `N(-1, 0.25)` and `N(1, 0.25)`.
    pub fn bimodal_1d() -> Self {
        Self::new(
            1,
            vec![
                (
                    0.5,
                    DVector::from_element(1, -1.0),
                    DMatrix::from_element(1, 1, 0.25),
                ),
                (
                    0.5,
                    DVector::from_element(1, 1.0),
                    DMatrix::from_element(1, 1, 0.25),
                ),
            ],
            8.0,
        )
        .expect("valid mixture")
    }

    /// Three-component mixture in two dimensions with unequal weights and
    /// full covariances.
    pub fn trimodal_2d() -> Self {
        Self::new(
            2,
            vec![
                (
                    0.5,
                    DVector::from_vec(vec![-1.5, 0.0]),
                    DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]),
                ),
                (
                    0.3,
                    DVector::from_vec(vec![1.0, 1.2]),
                    DMatrix::from_row_slice(2, 2, &[0.25, -0.05, -0.05, 0.35]),
                ),
                (
                    0.2,
                    DVector::from_vec(vec![0.8, -1.3]),
                    DMatrix::from_row_slice(2, 2, &[0.15, 0.0, 0.0, 0.15]),
                ),
            ],
            9.0,
        )
        .expect("valid mixture")
    }

    pub fn from_json(text: &str) -> Result<Self, TargetError> {
        let file: TargetFile = serde_json::from_str(text).map_err(TargetError::Parse)?;
        file.into_target()
    }

    pub fn from_path(path: &Path) -> Result<Self, TargetError> {
        let text = std::fs::read_to_string(path).map_err(|error| TargetError::Io {
            path: path.display().to_string(),
            error,
        })?;
        Self::from_json(&text)
    }

    pub fn to_file(&self) -> TargetFile {
        TargetFile {
            dim: self.dim,
            components: self
                .components
                .iter()
                .map(|c| ComponentFile {
                    weight: c.weight,
                    mean: c.mean.iter().copied().collect(),
                    cov: CovSpec::Flat(c.cov.transpose().iter().copied().collect()),
                })
                .collect(),
            support_radius: self.support_radius,
            radius_exponent: self.radius_exponent,
        }
    }

    /// Mass of the mixture outside the ball of radius `R`, bounded by a
    /// per-component Gaussian tail estimate (Chernoff bound on the norm).
    pub fn tail_mass_bound(&self) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let excess = self.support_radius - c.mean.norm();
                if c.is_atom() {
                    return if excess >= 0.0 { 0.0 } else { c.weight };
                }
                if excess <= 0.0 {
                    return c.weight;
                }
                let top = SymmetricEigen::new(c.cov.clone()).eigenvalues.max();
                let d = self.dim as f64;
                // P(‖L ξ‖ > r) ≤ P(‖ξ‖² > r²/λ_max), chi-square Chernoff tail.
                let u = excess * excess / top;
                let tail = if u > d {
                    ((u / d).ln() * d / 2.0 - (u - d) / 2.0).exp()
                } else {
                    1.0
                };
                c.weight * tail
            })
            .sum()
    }

    /// Draws `n` i.i.d. samples from the data distribution.
    pub fn sample_data<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Samples {
        let mut data = Vec::with_capacity(n * self.dim);
        let mut xi = DVector::zeros(self.dim);
        for _ in 0..n {
            let c = self.pick_component(rng.random::<f64>());
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let x = &c.mean + &c.sqrt_cov * &xi;
            data.extend(x.iter());
        }
        Samples {
            dim: self.dim,
            data,
        }
    }

    fn pick_component(&self, u: f64) -> &Component {
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                return c;
            }
        }
        self.components.last().expect("non-empty")
    }

    /// Density of the data distribution pushed to noise level `level`.
    pub fn density_at_level(&self, level: NoiseLevel, x: &[f64]) -> f64 {
        crate::moments::Posterior::new(self, level)
            .log_density(x)
            .exp()
    }
}

/// Samples stored row-major as an `n × dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Coordinate `k` of every sample.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let mut c = DMatrix::zeros(self.dim, self.dim);
        for r in self.rows() {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    c[(i, j)] += (r[i] - m[i]) * (r[j] - m[j]);
                }
            }
        }
        c / (self.len() as f64 - 1.0)
    }
}

/// Forward-process samples `X_t = √ᾱ_t X_0 + √(1−ᾱ_t) W` at step `t`.
pub fn sample_forward(
    target: &MixtureTarget,
    schedule: &Schedule,
    t: usize,
    n: usize,
    seed: u64,
) -> Samples {
    let level = schedule.level(t);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x0 = target.sample_data(&mut rng, n);
    let a = level.alpha_bar.sqrt();
    let b = level.one_minus.sqrt();
    for v in x0.data.iter_mut() {
        let w: f64 = rng.sample(StandardNormal);
        *v = a * *v + b * w;
    }
    x0
}

/// On-disk target definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetFile {
    pub dim: usize,
    pub components: Vec<ComponentFile>,
    pub support_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_exponent: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentFile {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: CovSpec,
}

/// Covariance as written in a target file: isotropic scalar, diagonal
/// vector, or full matrix (flat row-major or nested rows).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovSpec {
    Scalar(f64),
    Flat(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

impl CovSpec {
    fn to_matrix(&self, dim: usize, index: usize) -> Result<DMatrix<f64>, TargetError> {
        match self {
            CovSpec::Scalar(v) => Ok(DMatrix::identity(dim, dim) * *v),
            CovSpec::Flat(v) if v.len() == dim => {
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(v)))
            }
            CovSpec::Flat(v) if v.len() == dim * dim => Ok(DMatrix::from_row_slice(dim, dim, v)),
            CovSpec::Flat(v) => Err(TargetError::Shape {
                index,
                what: "covariance",
                got: v.len(),
                expected: dim * dim,
            }),
            CovSpec::Rows(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(TargetError::Shape {
                        index,
                        what: "covariance",
                        got: rows.iter().map(Vec::len).sum(),
                        expected: dim * dim,
                    });
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Ok(DMatrix::from_row_slice(dim, dim, &flat))
            }
        }
    }
}

impl TargetFile {
    pub fn into_target(self) -> Result<MixtureTarget, TargetError> {
        let dim = self.dim;
        let parts = self
            .components
            .iter()
            .enumerate()
            .map(|(index, c)| {
                let cov = c.cov.to_matrix(dim, index)?;
                Ok((c.weight, DVector::from_vec(c.mean.clone()), cov))
            })
            .collect::<Result<Vec<_>, TargetError>>()?;
        let mut target = MixtureTarget::new(dim, parts, self.support_radius)?;
        target.radius_exponent = self.radius_exponent;
        Ok(target)
    }
}

//! TV and KL between grid densities, Pinsker consistency and log-log rate fits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{DensityError, DensityGrid};
use crate::samplers::SamplerKind;

/// Densities below this are clamped before taking logarithms.
pub const DENSITY_FLOOR: f64 = 1e-300;
pub const PINSKER_SLACK: f64 = 1e-6;
const KL_NEGATIVE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Grid(#[from] DensityError),
    #[error("KL divergence {0:e} is negative beyond round-off; quadrature broke down")]
    NegativeKl(f64),
    #[error("rate fit needs at least 3 points (got {0})")]
    TooFewPoints(usize),
    #[error("rate fit needs positive T and TV (got T = {steps}, TV = {tv})")]
    NonPositive { steps: f64, tv: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvValue {
    /// `½∫|p − q|` over the window.
    pub raw: f64,
    /// `raw` plus half the combined leaked mass, capped at 1.
    pub corrected: f64,
}

/// Trapezoidal `½∫|p − q|`. Intervals where `p − q` changes sign are split
/// at the linear root, and each sign change gets the Euler–Maclaurin
/// endpoint correction of the two smooth pieces it separates, so the kink
/// of `|·|` does not leave an O(h²) error behind.
pub fn tv_distance(p: &DensityGrid, q: &DensityGrid) -> Result<TvValue, MetricsError> {
    p.ensure_same_grid(q)?;
    let h = p.spacing();
    let d: Vec<f64> = p.values.iter().zip(&q.values).map(|(a, b)| a - b).collect();
    let n = d.len();
    let slope = |i: usize| {
        if i == 0 {
            (d[1] - d[0]) / h
        } else if i == n - 1 {
            (d[n - 1] - d[n - 2]) / h
        } else {
            (d[i + 1] - d[i - 1]) / (2.0 * h)
        }
    };
    let mut acc = 0.0;
    for i in 0..n - 1 {
        let (a, b) = (d[i], d[i + 1]);
        if a * b < 0.0 {
            acc += h * (a * a + b * b) / (2.0 * (a.abs() + b.abs()));
            // The piece ending at x_i and the one starting at x_{i+1} each
            // miss -(h²/12)·f' at that end, with f = |d|.
            acc -= h * h / 12.0 * a.signum() * (slope(i) + slope(i + 1));
        } else {
            acc += 0.5 * h * (a.abs() + b.abs());
        }
    }
    let raw = (0.5 * acc).clamp(0.0, 1.0);
    let corrected = (raw + 0.5 * (p.leaked_mass_bound + q.leaked_mass_bound)).min(1.0);
    Ok(TvValue { raw, corrected })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlValue {
    pub value: f64,
    /// Mass of `q` over the points where `p` had to be clamped.
    pub clamped_mass: f64,
}

/// `KL(q ‖ p)` by the trapezoid rule on the integrand
/// `q ln(q/p) − q + p`, which is pointwise non-negative and integrates to
/// the usual divergence when both densities carry the same mass.
pub fn kl_divergence(q: &DensityGrid, p: &DensityGrid) -> Result<KlValue, MetricsError> {
    q.ensure_same_grid(p)?;
    let h = q.spacing();
    let n = q.n_points;
    let mut value = 0.0;
    let mut clamped_mass = 0.0;
    for i in 0..n {
        let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
        let qi = q.values[i];
        let mut pi = p.values[i];
        if pi < DENSITY_FLOOR {
            pi = DENSITY_FLOOR;
            clamped_mass += w * qi;
        }
        let term = if qi > 0.0 {
            qi * (qi / pi).ln() - qi + pi
        } else {
            pi
        };
        value += w * term;
    }
    if value < -KL_NEGATIVE_TOL {
        return Err(MetricsError::NegativeKl(value));
    }
    Ok(KlValue {
        value: value.max(0.0),
        clamped_mass,
    })
}

/// Pinsker: `TV ≤ √(KL/2)` up to [`PINSKER_SLACK`].
pub fn pinsker_holds(tv: f64, kl: f64) -> bool {
    tv <= (kl / 2.0).sqrt() + PINSKER_SLACK
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS residual in `ln TV`.
    pub residual: f64,
    pub n_points: usize,
}

/// Least squares of `ln TV` on `ln T`.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit, MetricsError> {
    if points.len() < 3 {
        return Err(MetricsError::TooFewPoints(points.len()));
    }
    if let Some(&(steps, tv)) = points.iter().find(|(s, v)| !(*s > 0.0 && *v > 0.0)) {
        return Err(MetricsError::NonPositive { steps, tv });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(RateFit {
        slope,
        intercept,
        residual: (ss / n).sqrt(),
        n_points: points.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub kind: SamplerKind,
    #[serde(flatten)]
    pub fit: RateFit,
    /// The smallest T when it was dropped as a pre-asymptotic outlier.
    pub excluded_t: Option<usize>,
}

/// Fits a rate, dropping the smallest `T` when its residual against the fit
/// on the remaining points exceeds three times that fit's RMS residual.
/// Needs at least four points for the exclusion to be considered.
pub fn fit_rate_with_exclusion(
    points: &[(usize, f64)],
) -> Result<(RateFit, Option<usize>), MetricsError> {
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| p.0);
    let as_f = |v: &[(usize, f64)]| v.iter().map(|&(t, tv)| (t as f64, tv)).collect::<Vec<_>>();
    let full = fit_rate(&as_f(&sorted))?;
    if sorted.len() < 4 {
        return Ok((full, None));
    }
    let rest = fit_rate(&as_f(&sorted[1..]))?;
    let (t0, tv0) = sorted[0];
    let r0 = tv0.ln() - rest.intercept - rest.slope * (t0 as f64).ln();
    if r0.abs() > 3.0 * rest.residual {
        log::info!(
            "rate fit: excluding T = {t0} (residual {r0:.3e} vs RMS {:.3e})",
            rest.residual
        );
        Ok((rest, Some(t0)))
    } else {
        Ok((full, None))
    }
}

/// One `(T, sampler)` cell of a convergence sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(rename = "T")]
    pub steps: usize,
    pub kind: SamplerKind,
    pub tv: f64,
    pub tv_corrected: f64,
    pub kl: f64,
    pub grid_points: usize,
    pub leaked_mass: f64,
}

impl ReportRow {
    pub fn pinsker_ok(&self) -> bool {
        pinsker_holds(self.tv_corrected, self.kl) && pinsker_holds(self.tv, self.kl)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ReportRow>,
    pub slopes: Vec<SlopeFit>,
    pub pinsker_ok: bool,
}

pub const CSV_HEADER: &str = "T,kind,tv,tv_corrected,kl,grid_points,leaked_mass";

impl ConvergenceReport {
    /// Builds the report, fitting one slope per sampler kind that has at
    /// least three rows (on the corrected TV).
    pub fn from_rows(rows: Vec<ReportRow>) -> Result<Self, MetricsError> {
        let mut kinds: Vec<SamplerKind> = rows.iter().map(|r| r.kind).collect();
        kinds.sort();
        kinds.dedup();
        let mut slopes = Vec::new();
        for kind in kinds {
            let pts: Vec<(usize, f64)> = rows
                .iter()
                .filter(|r| r.kind == kind)
                .map(|r| (r.steps, r.tv_corrected))
                .collect();
            if pts.len() < 3 {
                log::info!("{kind}: {} point(s), slope fit skipped", pts.len());
                continue;
            }
            let (fit, excluded_t) = fit_rate_with_exclusion(&pts)?;
            slopes.push(SlopeFit {
                kind,
                fit,
                excluded_t,
            });
        }
        let mut report = Self {
            rows,
            slopes,
            pinsker_ok: false,
        };
        pinsker_check(&mut report);
        Ok(report)
    }

    pub fn slope(&self, kind: SamplerKind) -> Option<&SlopeFit> {
        self.slopes.iter().find(|s| s.kind == kind)
    }

    pub fn row(&self, steps: usize, kind: SamplerKind) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.steps == steps && r.kind == kind)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.17e},{:.17e},{:.17e},{},{:.17e}\n",
                r.steps, r.kind, r.tv, r.tv_corrected, r.kl, r.grid_points, r.leaked_mass
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Vec<ReportRow>, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            other => return Err(format!("unexpected CSV header {other:?}")),
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 7 {
                    return Err(format!("row {}: expected 7 fields", i + 1));
                }
                let num = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| format!("row {}: {e}", i + 1))
                };
                let int = |s: &str| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|e| format!("row {}: {e}", i + 1))
                };
                Ok(ReportRow {
                    steps: int(f[0])?,
                    kind: f[1].parse()?,
                    tv: num(f[2])?,
                    tv_corrected: num(f[3])?,
                    kl: num(f[4])?,
                    grid_points: int(f[5])?,
                    leaked_mass: num(f[6])?,
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Sets and returns the Pinsker flag over every row.
pub fn pinsker_check(report: &mut ConvergenceReport) -> bool {
    report.pinsker_ok = report.rows.iter().all(ReportRow::pinsker_ok);
    report.pinsker_ok
}

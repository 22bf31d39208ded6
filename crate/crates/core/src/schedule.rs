//! Learning-rate schedule for the variance-preserving forward process.
//!
//! The schedule starts with a tiny first step `β_1 = T^{-c0}` and grows
//! geometrically at rate `1 + c1·ln T / T` until it saturates at the cap
//! `c1·ln T / T`, which it keeps for the remaining steps.
//!
//! Steps are 1-based throughout (`t = 1..=T`) to match the usual indexing of
//! diffusion chains. `1 − ᾱ_t` is stored separately from `ᾱ_t`: for the
//! first few steps `ᾱ_t` is within `T^{-c0}` of one and the subtraction
//! would lose most of its significant digits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("step count T = {0} is too small (need T >= 2)")]
    TooFewSteps(usize),
    #[error("c0 must be positive and finite (got {0})")]
    BadC0(f64),
    #[error("c1 must be positive and finite (got {0})")]
    BadC1(f64),
    #[error(
        "c1·ln(T)/T = {rate:.4} >= 1/2 for T = {steps}, c1 = {c1}; alpha_t >= 1/2 cannot hold"
    )]
    RateTooLarge { steps: usize, c1: f64, rate: f64 },
    #[error("step index {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("beta_{t} = {beta} is outside (0, 1)")]
    BetaOutOfRange { t: usize, beta: f64 },
}

/// Parameters of the schedule: step count and the two rate constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    #[serde(rename = "T")]
    pub steps: usize,
    pub c0: f64,
    pub c1: f64,
}

impl ScheduleParams {
    pub const DEFAULT_C0: f64 = 2.0;
    pub const DEFAULT_C1: f64 = 4.0;

    pub fn new(steps: usize, c0: f64, c1: f64) -> Self {
        Self { steps, c0, c1 }
    }

    pub fn with_defaults(steps: usize) -> Self {
        Self::new(steps, Self::DEFAULT_C0, Self::DEFAULT_C1)
    }

    /// `c1·ln T / T`, the saturation value of `β_t`.
    pub fn rate(&self) -> f64 {
        let t = self.steps as f64;
        self.c1 * t.ln() / t
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.steps < 2 {
            return Err(ScheduleError::TooFewSteps(self.steps));
        }
        if !(self.c0.is_finite() && self.c0 > 0.0) {
            return Err(ScheduleError::BadC0(self.c0));
        }
        if !(self.c1.is_finite() && self.c1 > 0.0) {
            return Err(ScheduleError::BadC1(self.c1));
        }
        let rate = self.rate();
        if rate >= 0.5 {
            return Err(ScheduleError::RateTooLarge {
                steps: self.steps,
                c1: self.c1,
                rate,
            });
        }
        Ok(())
    }
}

/// Noise level of the forward marginal: `X = √ᾱ X_0 + √(1−ᾱ) W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub alpha_bar: f64,
    /// `1 − ᾱ`, kept separately for precision near `ᾱ = 1`.
    pub one_minus: f64,
}

impl NoiseLevel {
    pub fn from_alpha_bar(alpha_bar: f64) -> Self {
        Self {
            alpha_bar,
            one_minus: 1.0 - alpha_bar,
        }
    }

    /// Builds a level from `1 − ᾱ` directly, which is exact for tiny noise.
    pub fn from_one_minus(one_minus: f64) -> Self {
        Self {
            alpha_bar: 1.0 - one_minus,
            one_minus,
        }
    }
}

/// Per-step coefficients the reverse update rules need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoeffs {
    pub t: usize,
    pub alpha: f64,
    /// `1 − α_t`.
    pub beta: f64,
    pub level: NoiseLevel,
    /// `σ_t² = 1/α_t − 1`.
    pub sigma_sq: f64,
}

impl StepCoeffs {
    pub fn sigma(&self) -> f64 {
        self.sigma_sq.sqrt()
    }

    /// `(1 − α_t)/(1 − ᾱ_t)`, the relative step size.
    pub fn relative_step(&self) -> f64 {
        self.beta / self.level.one_minus
    }
}

/// The full `{β_t, α_t, ᾱ_t, σ_t²}` table.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    params: Option<ScheduleParams>,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    one_minus_alpha_bar: Vec<f64>,
    sigma_sq: Vec<f64>,
}

/// The `β` table for `params` without the rate guard; used to inspect
/// parameter sets that `build_schedule` refuses.
pub fn schedule_betas(params: ScheduleParams) -> Vec<f64> {
    let rate = params.rate();
    let t_f = params.steps as f64;
    let beta1 = t_f.powf(-params.c0);
    let growth = (1.0 + rate).ln();
    (1..=params.steps)
        .map(|t| {
            if t == 1 {
                beta1
            } else {
                // β_1·(1+rate)^t evaluated in log space so huge t cannot overflow.
                let geometric = (beta1.ln() + t as f64 * growth).exp();
                rate * geometric.min(1.0)
            }
        })
        .collect()
}

/// Builds the schedule from validated parameters.
pub fn build_schedule(params: ScheduleParams) -> Result<Schedule, ScheduleError> {
    params.validate()?;
    let mut schedule = Schedule::from_betas(schedule_betas(params))?;
    schedule.params = Some(params);
    Ok(schedule)
}

impl Schedule {
    /// Builds a schedule from an explicit `β` table (used for hand-built
    /// schedules in tests and diagnostics). Only `β_t ∈ (0, 1)` is enforced;
    /// a single step is allowed and gives an empty reverse chain.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, ScheduleError> {
        if betas.is_empty() {
            return Err(ScheduleError::TooFewSteps(betas.len()));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(ScheduleError::BetaOutOfRange { t: i + 1, beta: b });
            }
        }
        let n = betas.len();
        let mut alpha = Vec::with_capacity(n);
        let mut alpha_bar = Vec::with_capacity(n);
        let mut one_minus_alpha_bar = Vec::with_capacity(n);
        let mut sigma_sq = Vec::with_capacity(n);
        let mut log_alpha_bar = 0.0_f64;
        for &b in &betas {
            let a = 1.0 - b;
            log_alpha_bar += (-b).ln_1p();
            alpha.push(a);
            alpha_bar.push(log_alpha_bar.exp());
            one_minus_alpha_bar.push(-log_alpha_bar.exp_m1());
            sigma_sq.push(b / a);
        }
        Ok(Self {
            params: None,
            beta: betas,
            alpha,
            alpha_bar,
            one_minus_alpha_bar,
            sigma_sq,
        })
    }

    pub fn params(&self) -> Option<ScheduleParams> {
        self.params
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sigma_sqs(&self) -> &[f64] {
        &self.sigma_sq
    }

    fn check(&self, t: usize) -> Result<usize, ScheduleError> {
        if t == 0 || t > self.steps() {
            Err(ScheduleError::StepOutOfRange {
                t,
                steps: self.steps(),
            })
        } else {
            Ok(t - 1)
        }
    }

    /// `ᾱ_t = ∏_{k≤t} α_k`.
    pub fn alpha_bar_at(&self, t: usize) -> Result<f64, ScheduleError> {
        self.check(t).map(|i| self.alpha_bar[i])
    }

    /// Noise level at step `t`. Panics when `t` is outside `1..=T`.
    pub fn level(&self, t: usize) -> NoiseLevel {
        let i = self.check(t).unwrap_or_else(|e| panic!("{e}"));
        NoiseLevel {
            alpha_bar: self.alpha_bar[i],
            one_minus: self.one_minus_alpha_bar[i],
        }
    }

    /// Coefficients of step `t`. Panics when `t` is outside `1..=T`.
    pub fn coeffs(&self, t: usize) -> StepCoeffs {
        let i = self.check(t).unwrap_or_else(|e| panic!("{e}"));
        StepCoeffs {
            t,
            alpha: self.alpha[i],
            beta: self.beta[i],
            level: NoiseLevel {
                alpha_bar: self.alpha_bar[i],
                one_minus: self.one_minus_alpha_bar[i],
            },
            sigma_sq: self.sigma_sq[i],
        }
    }

    /// CSV dump with columns `t,beta,alpha,alpha_bar,sigma_sq`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,beta,alpha,alpha_bar,sigma_sq\n");
        for i in 0..self.steps() {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                i + 1,
                self.beta[i],
                self.alpha[i],
                self.alpha_bar[i],
                self.sigma_sq[i]
            ));
        }
        out
    }
}

/// Outcome of one schedule property check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    /// Smallest slack `bound − value` over all steps; negative when violated.
    pub worst_margin: f64,
    pub worst_t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub steps: usize,
    pub rate: f64,
    pub checks: Vec<PropertyCheck>,
}

impl PropertyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tracker {
    name: &'static str,
    worst: f64,
    worst_t: usize,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            worst: f64::INFINITY,
            worst_t: 0,
        }
    }

    fn margin(&mut self, t: usize, margin: f64) {
        if margin < self.worst || margin.is_nan() {
            self.worst = margin;
            self.worst_t = t;
        }
    }

    fn finish(self) -> PropertyCheck {
        PropertyCheck {
            name: self.name.to_string(),
            passed: self.worst >= 0.0,
            worst_margin: self.worst,
            worst_t: self.worst_t,
        }
    }
}

/// Checks the four structural properties of the schedule exhaustively over
/// `t`. Hand-built schedules without parameters use `max_t β_t` as the rate.
///
/// - `a`: `α_t ≥ 1 − rate ≥ 1/2`
/// - `b`: `(1−α_t)/(1−ᾱ_{t−1}) ≤ 4·rate` for `t ≥ 2`
/// - `c`: `1 ≤ (1−ᾱ_t)/(1−ᾱ_{t−1}) ≤ 1 + 4·rate` for `t ≥ 2`
/// - `d`: `ᾱ_T ≤ (1 − rate)^{T/2}`
pub fn verify_schedule_properties(schedule: &Schedule) -> PropertyReport {
    let n = schedule.steps();
    let rate = schedule
        .params
        .map(|p| p.rate())
        .unwrap_or_else(|| schedule.beta.iter().cloned().fold(0.0, f64::max));

    let mut a = Tracker::new("a");
    a.margin(0, (1.0 - rate) - 0.5);
    let mut b = Tracker::new("b");
    let mut c = Tracker::new("c");
    for t in 1..=n {
        let i = t - 1;
        a.margin(t, schedule.alpha[i] - (1.0 - rate));
        if t >= 2 {
            let prev = schedule.one_minus_alpha_bar[i - 1];
            let cur = schedule.one_minus_alpha_bar[i];
            b.margin(t, 4.0 * rate - schedule.beta[i] / prev);
            let ratio = cur / prev;
            c.margin(t, (ratio - 1.0).min(1.0 + 4.0 * rate - ratio));
        }
    }
    let mut d = Tracker::new("d");
    let bound = (1.0 - rate).max(0.0).powf(n as f64 / 2.0);
    d.margin(n, bound - schedule.alpha_bar[n - 1]);

    PropertyReport {
        steps: n,
        rate,
        checks: vec![a.finish(), b.finish(), c.finish(), d.finish()],
    }
}

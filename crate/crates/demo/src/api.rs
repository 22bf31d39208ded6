use difftv::density::{reverse_density, DensityGrid};
use difftv::metrics::{kl_divergence, tv_distance};
use difftv::moments::Posterior;
use difftv::samplers::SamplerKind;
use difftv::schedule::{build_schedule, verify_schedule_properties, Schedule, ScheduleParams};
use difftv::target::MixtureTarget;
use serde::Serialize;

pub const MAX_STEPS: usize = 1000;
pub const MAX_POINTS: usize = 4096;
const WINDOW: (f64, f64) = (-8.0, 8.0);
const LEAK_TOL: f64 = 1e-3;

/// Built-in one-dimensional targets selectable from the page.
pub fn target_by_name(name: &str) -> Result<MixtureTarget, String> {
    match name {
        "bimodal" => Ok(MixtureTarget::bimodal_1d()),
        "point_atom" => Ok(MixtureTarget::point_atom_1d(0.0)),
        "gaussian" => Ok(MixtureTarget::gaussian_1d(0.5, 0.5)),
        other => Err(format!(
            "unknown target {other:?} (bimodal, point_atom, gaussian)"
        )),
    }
}

fn schedule(steps: usize, c0: f64, c1: f64) -> Result<Schedule, String> {
    if steps > MAX_STEPS {
        return Err(format!("T = {steps} exceeds the demo limit of {MAX_STEPS}"));
    }
    build_schedule(ScheduleParams::new(steps, c0, c1)).map_err(|e| e.to_string())
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct ScheduleView {
    t: Vec<usize>,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma_sq: Vec<f64>,
    properties: Vec<PropertyView>,
}

#[derive(Serialize)]
struct PropertyView {
    name: String,
    passed: bool,
    worst_margin: f64,
}

/// Per-step `β_t`, `ᾱ_t`, `σ_t²` and the schedule property report.
pub fn schedule_json(steps: usize, c0: f64, c1: f64) -> Result<String, String> {
    let s = schedule(steps, c0, c1)?;
    let report = verify_schedule_properties(&s);
    json(&ScheduleView {
        t: (1..=steps).collect(),
        beta: s.betas().to_vec(),
        alpha_bar: s.alpha_bars().to_vec(),
        sigma_sq: s.sigma_sqs().to_vec(),
        properties: report
            .checks
            .iter()
            .map(|c| PropertyView {
                name: c.name.clone(),
                passed: c.passed,
                worst_margin: c.worst_margin,
            })
            .collect(),
    })
}

#[derive(Serialize)]
struct DensityView {
    y: Vec<f64>,
    p1: Vec<f64>,
    q1: Vec<f64>,
    tv: f64,
    kl: f64,
}

/// Sampler output law `p_1` next to the exact `q_1` on a uniform grid.
pub fn reverse_density_json(
    target: &str,
    sampler: &str,
    steps: usize,
    c0: f64,
    c1: f64,
    points: usize,
) -> Result<String, String> {
    if points > MAX_POINTS {
        return Err(format!(
            "{points} grid points exceeds the demo limit of {MAX_POINTS}"
        ));
    }
    let target = target_by_name(target)?;
    let kind: SamplerKind = sampler.parse()?;
    let s = schedule(steps, c0, c1)?;
    let (lo, hi) = WINDOW;
    let p1 =
        reverse_density(&target, &s, kind, lo, hi, points, LEAK_TOL).map_err(|e| e.to_string())?;
    let q1 =
        DensityGrid::exact_marginal(&target, &s, 1, lo, hi, points).map_err(|e| e.to_string())?;
    let tv = tv_distance(&p1, &q1).map_err(|e| e.to_string())?.corrected;
    let kl = kl_divergence(&q1, &p1).map_err(|e| e.to_string())?.value;
    json(&DensityView {
        y: p1.points(),
        p1: p1.values.clone(),
        q1: q1.values.clone(),
        tv,
        kl,
    })
}

#[derive(Serialize)]
struct MomentView {
    x: Vec<f64>,
    density: Vec<f64>,
    score: Vec<f64>,
    jac: Vec<f64>,
    w_corr: Vec<f64>,
}

/// Marginal density, score, score Jacobian and second-order correction of
/// `q_t` on `[-4, 4]`.
pub fn moments_json(
    target: &str,
    t: usize,
    steps: usize,
    c0: f64,
    c1: f64,
) -> Result<String, String> {
    let target = target_by_name(target)?;
    let s = schedule(steps, c0, c1)?;
    if t == 0 || t > steps {
        return Err(format!("t = {t} outside 1..={steps}"));
    }
    let post = Posterior::at_step(&target, &s, t);
    let xs: Vec<f64> = (0..=400).map(|i| -4.0 + 0.02 * i as f64).collect();
    let m: Vec<_> = xs.iter().map(|&x| post.eval_1d(x)).collect();
    json(&MomentView {
        density: m.iter().map(|v| v.density).collect(),
        score: m.iter().map(|v| v.score).collect(),
        jac: m.iter().map(|v| v.jac).collect(),
        w_corr: m.iter().map(|v| v.w_corr).collect(),
        x: xs,
    })
}

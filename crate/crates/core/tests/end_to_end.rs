use std::path::{Path, PathBuf};

use difftv::density::{
    gaussian_chain, gaussian_tv, normal_pdf, propagate_stochastic, DensityGrid, GaussianLaw,
};
use difftv::experiment::{self, RunConfig};
use difftv::samplers::{run_reverse, SamplerKind, SamplerSpec};
use difftv::schedule::{build_schedule, ScheduleParams};
use difftv::target::MixtureTarget;
use proptest::prelude::*;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn shipped_target_files_match_builtin_targets() {
    let dir = repo().join("targets");
    let load = |name: &str| MixtureTarget::from_path(&dir.join(name)).unwrap();
    assert_eq!(load("bimodal_1d.json"), MixtureTarget::bimodal_1d());
    assert_eq!(load("trimodal_2d.json"), MixtureTarget::trimodal_2d());
    assert_eq!(
        load("point_atom_1d.json"),
        MixtureTarget::point_atom_1d(0.0)
    );
}

#[test]
fn point_atom_sweep_matches_gaussian_chain_at_every_step_count() {
    let cfg = RunConfig::load(&repo().join("configs/point_atom.json")).unwrap();
    let target = cfg.load_target().unwrap();
    let out = experiment::sweep(&cfg, &target).unwrap();
    assert_eq!(out.report.rows.len(), 20);
    for row in &out.report.rows {
        let s = build_schedule(cfg.schedule_params(row.steps)).unwrap();
        let q1 = GaussianLaw {
            mean: 0.0,
            var: s.level(1).one_minus,
        };
        let exact = gaussian_tv(gaussian_chain(0.0, 0.0, &s, row.kind), q1);
        assert!(
            (row.tv - exact).abs() <= 1e-5,
            "T={} {}: grid {} vs exact {exact}",
            row.steps,
            row.kind,
            row.tv
        );
    }
}

#[test]
fn sampled_second_moments_match_gaussian_chain() {
    let target = MixtureTarget::point_atom_1d(0.0);
    let s = build_schedule(ScheduleParams::new(50, 1.0, 2.0)).unwrap();
    let n = 40_000;
    for (i, kind) in SamplerKind::ALL.into_iter().enumerate() {
        let run = run_reverse(&target, &s, SamplerSpec::new(kind, 90 + i as u64), n);
        let xs = run.finite_samples().data;
        assert_eq!(xs.len(), n);
        let law = gaussian_chain(0.0, 0.0, &s, kind);
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        // Var of x² under N(0, v) is 2v².
        let se = (2.0_f64 / n as f64).sqrt() * law.var;
        assert!(
            (m2 - law.var).abs() <= 5.0 * se,
            "{kind}: {m2} vs {}",
            law.var
        );
    }
}

#[test]
fn reverse_density_keeps_unit_mass() {
    let target = MixtureTarget::bimodal_1d();
    let s = build_schedule(ScheduleParams::new(50, 1.0, 3.8)).unwrap();
    for kind in SamplerKind::ALL {
        let p = difftv::density::reverse_density(&target, &s, kind, -8.0, 8.0, 2048, 1e-3).unwrap();
        assert!(
            p.mass_in_window <= 1.0 + 1e-6 && p.mass_in_window + p.leaked_mass_bound >= 1.0 - 1e-6,
            "{kind}: mass {} leak {}",
            p.mass_in_window,
            p.leaked_mass_bound
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn stochastic_propagation_is_linear(
        a in 0.1f64..2.0,
        b in 0.1f64..2.0,
        m1 in -2.0f64..2.0,
        m2 in -2.0f64..2.0,
    ) {
        let target = MixtureTarget::bimodal_1d();
        let s = build_schedule(ScheduleParams::new(25, 1.0, 3.8)).unwrap();
        let bump = |m: f64| DensityGrid::from_fn(-8.0, 8.0, 512, 0.0, move |x| normal_pdf(x - m)).unwrap();
        let (g1, g2) = (bump(m1), bump(m2));
        let mix = DensityGrid::from_fn(-8.0, 8.0, 512, 0.0, |x| a * normal_pdf(x - m1) + b * normal_pdf(x - m2)).unwrap();
        for kind in [SamplerKind::DdpmPlain, SamplerKind::DdpmAccel] {
            let p1 = propagate_stochastic(&g1, &target, &s, kind, 1.0).unwrap();
            let p2 = propagate_stochastic(&g2, &target, &s, kind, 1.0).unwrap();
            let pm = propagate_stochastic(&mix, &target, &s, kind, 1.0).unwrap();
            for i in 0..pm.values.len() {
                let lin = a * p1.values[i] + b * p2.values[i];
                prop_assert!((pm.values[i] - lin).abs() <= 1e-12 * (1.0 + lin.abs()));
            }
        }
    }
}

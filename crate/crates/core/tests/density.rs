use difftv::density::*;
use difftv::moments::Posterior;
use difftv::samplers::{self, SamplerKind};
use difftv::schedule::Schedule;
use difftv::schedule::{build_schedule, ScheduleParams};
use difftv::target::MixtureTarget;

#[test]
fn hermite_rule_integrates_polynomials() {
    let (x, w) = gauss_hermite(20);
    let sp = std::f64::consts::PI.sqrt();
    let m0: f64 = w.iter().sum();
    let m2: f64 = x.iter().zip(&w).map(|(a, b)| a * a * b).sum();
    let m8: f64 = x.iter().zip(&w).map(|(a, b)| a.powi(8) * b).sum();
    assert!((m0 - sp).abs() < 1e-13);
    assert!((m2 - sp / 2.0).abs() < 1e-13);
    assert!((m8 - 105.0 * sp / 16.0).abs() < 1e-11);
}

#[test]
fn interpolation_is_exact_for_quintics() {
    let g = DensityGrid::from_fn(-1.0, 1.0, 257, 0.0, |x| 1.0 + x.powi(5) - x * x).unwrap();
    for x in [-0.999_f64, -0.3337, 0.0001, 0.71, 0.9999] {
        let expect = 1.0 + x.powi(5) - x * x;
        assert!((g.interpolate(x) - expect).abs() < 1e-13);
    }
    assert_eq!(g.interpolate(1.5), 0.0);
}

#[test]
fn newton_finds_roots_with_bad_start() {
    let x = invert_increasing(|x| (x.powi(3) + x, 3.0 * x * x + 1.0), 10.0, -50.0).unwrap();
    assert!((x - 2.0).abs() < 1e-13);
    let x = invert_increasing(|x| (x.atan(), 0.0), 0.5, 30.0).unwrap();
    assert!((x - 0.5_f64.tan()).abs() < 1e-12);
}

#[test]
fn one_stochastic_step_matches_gaussian_law() {
    let s = Schedule::from_betas(vec![0.01, 0.2]).unwrap();
    let g = DensityGrid::standard_normal(-8.0, 8.0, 2048).unwrap();
    let atom = MixtureTarget::point_atom_1d(0.0);
    for kind in [SamplerKind::DdpmPlain, SamplerKind::DdpmAccel] {
        let out = propagate_stochastic(&g, &atom, &s, kind, 1e-3).unwrap();
        let law = gaussian_chain(0.0, 0.0, &s, kind);
        for (y, v) in out.points().iter().zip(&out.values) {
            assert!((v - law.pdf(*y)).abs() < 1e-10, "{kind} at {y}");
        }
    }
}

#[test]
fn no_steps_leaves_grid_unchanged() {
    let s = Schedule::from_betas(vec![0.01]).unwrap();
    let g = DensityGrid::standard_normal(-8.0, 8.0, 512).unwrap();
    let atom = MixtureTarget::point_atom_1d(0.0);
    let out = propagate_stochastic(&g, &atom, &s, SamplerKind::DdpmPlain, 1e-3).unwrap();
    assert_eq!(out, g);
    let pf = pushforward_deterministic(-8.0, 8.0, 512, &atom, &s, SamplerKind::OdePlain).unwrap();
    for (a, b) in pf.values.iter().zip(&g.values) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn gaussian_tv_closed_forms() {
    let a = GaussianLaw {
        mean: 0.0,
        var: 1.0,
    };
    let b = GaussianLaw {
        mean: 1.0,
        var: 1.0,
    };
    let expect = 2.0 * normal_cdf(0.5) - 1.0;
    assert!((gaussian_tv(a, b) - expect).abs() < 1e-15);
    assert_eq!(gaussian_tv(a, a), 0.0);
    let c = GaussianLaw {
        mean: 0.2,
        var: 1.7,
    };
    let num = DensityGrid::from_fn(-14.0, 14.0, 20001, 0.0, |x| {
        0.5 * (a.pdf(x) - c.pdf(x)).abs()
    })
    .unwrap();
    assert!((gaussian_tv(a, c) - num.mass_in_window).abs() < 1e-7);
    assert!((gaussian_tv(a, c) - gaussian_tv(c, a)).abs() < 1e-15);
}

#[test]
fn gaussian_chain_matches_step_maps() {
    let s = build_schedule(ScheduleParams::new(50, 1.0, 2.0)).unwrap();
    let target = MixtureTarget::gaussian_1d(0.4, 0.3);
    for kind in SamplerKind::ALL {
        // Push the two points 0 and 1 through the deterministic parts to
        // recover the affine maps, and compare the noise.
        let law = gaussian_chain(0.4, 0.3, &s, kind);
        let mut mean = 0.0;
        let mut var = 1.0;
        for t in (2..=50).rev() {
            let post = Posterior::at_step(&target, &s, t);
            let c = s.coeffs(t);
            let f0 = samplers::step_1d(kind, 0.0, 0.0, &c, &post.eval_1d(0.0));
            let f1 = samplers::step_1d(kind, 1.0, 0.0, &c, &post.eval_1d(1.0));
            let noise = samplers::kernel_std_1d(kind, &c, &post.eval_1d(0.3));
            let a = f1 - f0;
            mean = a * mean + f0;
            var = a * a * var + noise * noise;
        }
        assert!((law.mean - mean).abs() < 1e-12, "{kind}");
        assert!((law.var - var).abs() < 1e-12 * var, "{kind}");
    }
}

#[test]
fn histogram_of_identical_samples_fills_one_bin() {
    let h = histogram_density(&vec![0.35; 20_000], 10, 0.0, 1.0).unwrap();
    assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    assert_eq!(h.counts[3], 20_000);
    assert!(histogram_density(&[0.0; 10], 10, 0.0, 1.0).is_err());
    assert_eq!(
        histogram_density(&vec![5.0; 20_000], 10, 0.0, 1.0),
        Err(DensityError::EmptyWindow)
    );
}

#[test]
fn ks_of_exact_quantiles_is_small() {
    let n = 1000;
    let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
    assert!((d - 0.5 / n as f64).abs() < 1e-12);
}

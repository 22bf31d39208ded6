use difftv::moments::moments;
use difftv::moments::Posterior;
use difftv::samplers::*;
use difftv::schedule::build_schedule;
use difftv::schedule::{Schedule, ScheduleParams};
use difftv::target::{MixtureTarget, Samples};
use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn sched() -> Schedule {
    build_schedule(ScheduleParams::new(100, 2.0, 4.0)).unwrap()
}

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

#[test]
fn kind_names_round_trip() {
    for k in SamplerKind::ALL {
        assert_eq!(k.as_str().parse::<SamplerKind>().unwrap(), k);
        let j = serde_json::to_string(&k).unwrap();
        assert_eq!(j, format!("\"{}\"", k.as_str()));
    }
    assert!("ddim".parse::<SamplerKind>().is_err());
}

#[test]
fn point_atom_closed_forms() {
    let s = sched();
    let atom = MixtureTarget::point_atom_1d(0.0);
    for t in [2, 30, 100] {
        let c = s.coeffs(t);
        let v = c.level.one_minus;
        let h = c.beta / v;
        for x in [-1.1, 0.4, 2.2] {
            let m = moments(&atom, &s, t, &[x]);
            let ctx = StepContext::new(c, &m);
            let sa = c.alpha.sqrt();
            let ode = ode_step(&v1(x), &ctx)[0];
            assert!((ode - x * (1.0 - h / 2.0) / sa).abs() < 1e-12);
            let ddpm = ddpm_step(&v1(x), &v1(0.0), &ctx)[0];
            assert!((ddpm - x * (1.0 - h) / sa).abs() < 1e-12);
            // With the atom's cubic correction the accelerated map is linear.
            let acc = ode_accel_step(&v1(x), &ctx)[0];
            let expect = x * (1.0 - h / 2.0 - h * h / 8.0) / sa;
            assert!(
                (acc - expect).abs() < 1e-10 * (1.0 + expect.abs()),
                "{acc} {expect}"
            );
            // J_t = 1 for an atom, so the kernel multiplier is 1 − h/2.
            let f = accel_noise_factor(&ctx)[(0, 0)];
            assert!((f - (1.0 - h / 2.0)).abs() < 1e-9);
        }
    }
}

#[test]
fn stationary_points_and_gaussian_target() {
    let s = sched();
    let std = MixtureTarget::standard_normal(1);
    let c = s.coeffs(40);
    let m = moments(&std, &s, 40, &[0.0]);
    let ctx = StepContext::new(c, &m);
    assert_eq!(ode_step(&v1(0.0), &ctx)[0], 0.0);
    assert_eq!(ode_accel_step(&v1(0.0), &ctx)[0], 0.0);
    let x = 1.3;
    let m = moments(&std, &s, 40, &[x]);
    let ctx = StepContext::new(c, &m);
    let expect = x * (1.0 - c.beta / 2.0) / c.alpha.sqrt();
    assert!((ode_step(&v1(x), &ctx)[0] - expect).abs() < 1e-12);
}

#[test]
fn dropping_second_order_terms_recovers_plain_ode() {
    let s = sched();
    let target = MixtureTarget::bimodal_1d();
    let c = s.coeffs(60);
    let m = moments(&target, &s, 60, &[0.3]);
    let plain = ode_step(&v1(0.3), &StepContext::new(c, &m))[0];
    let acc = ode_accel_step(&v1(0.3), &StepContext::new(c, &m))[0];
    let b2 = c.beta * c.beta / 8.0;
    let extra =
        (b2 / c.level.one_minus - b2 * m.score[0] * m.score[0]) * m.score[0] + b2 * m.w_corr[0];
    assert!((acc - plain - extra / c.alpha.sqrt()).abs() < 1e-14);
}

#[test]
fn accelerated_forms_agree() {
    let s = sched();
    let targets = [MixtureTarget::bimodal_1d(), MixtureTarget::trimodal_2d()];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for target in &targets {
        let d = target.dim();
        for _ in 0..100 {
            let t = rng.random_range(2..=100);
            let y = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
            let z = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
            let m = moments(target, &s, t, y.as_slice());
            let ctx = StepContext::new(s.coeffs(t), &m);
            let a = ddpm_accel_step(&y, &z, &ctx);
            let b = ddpm_accel_step_kernel(&y, &z, &ctx);
            assert!((&a - &b).amax() <= 1e-12 * (1.0 + a.amax()));
            let zero = DVector::zeros(d);
            assert_eq!(ddpm_accel_step(&y, &zero, &ctx), ddpm_step(&y, &zero, &ctx));
        }
    }
}

#[test]
fn scalar_steps_match_vector_steps() {
    let s = sched();
    let target = MixtureTarget::bimodal_1d();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let t = rng.random_range(2..=100);
        let x: f64 = rng.random_range(-3.0..3.0);
        let z: f64 = rng.sample(StandardNormal);
        let post = Posterior::at_step(&target, &s, t);
        let m = post.eval(&[x]);
        let m1 = post.eval_1d(x);
        let c = s.coeffs(t);
        let ctx = StepContext::new(c, &m);
        for kind in SamplerKind::ALL {
            let a = step(kind, &v1(x), &v1(z), &ctx)[0];
            let b = step_1d(kind, x, z, &c, &m1);
            assert!((a - b).abs() <= 1e-11 * (1.0 + a.abs()), "{kind} {a} {b}");
        }
    }
}

#[test]
fn accel_minus_plain_is_second_order() {
    // |Δ| ≤ K β² with K frozen from a T = 100 run on the bimodal target.
    const K: f64 = 40.0;
    let target = MixtureTarget::bimodal_1d();
    for steps in [100, 400] {
        let s = build_schedule(ScheduleParams::new(steps, 2.0, 4.0)).unwrap();
        for t in (2..=steps).step_by(7) {
            let post = Posterior::at_step(&target, &s, t);
            let c = s.coeffs(t);
            for x in [-2.5, -1.0, 0.0, 0.6, 2.0] {
                let m = post.eval_1d(x);
                let d = ode_accel_step_1d(x, &c, &m) - ode_step_1d(x, &c, &m);
                let rel = c.beta / c.level.one_minus;
                assert!(d.abs() <= K * rel * rel, "t={t} x={x} d={d}");
            }
        }
    }
}

#[test]
fn runner_is_reproducible_and_thread_independent() {
    let s = sched();
    let target = MixtureTarget::bimodal_1d();
    for kind in SamplerKind::ALL {
        let spec = SamplerSpec::new(kind, 42);
        let a = run_reverse(&target, &s, spec, 64);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let b = pool.install(|| run_reverse(&target, &s, spec, 64));
        assert_eq!(a, b);
        let one = run_reverse(&target, &s, spec, 1);
        assert_eq!(one.endpoints.row(0), a.endpoints.row(0));
        assert!(a.failures.is_empty());
    }
}

#[test]
fn finite_samples_drops_failed_rows() {
    let run = ReverseRun {
        endpoints: Samples {
            dim: 1,
            data: vec![0.5, f64::INFINITY, -1.0],
        },
        failures: vec![TrajectoryFailure { index: 1, t: 7 }],
    };
    assert_eq!(run.finite_samples().data, vec![0.5, -1.0]);
    assert!(run.to_csv().starts_with("y0\n"));
}

use difftv::experiment::*;
use difftv::schedule::{build_schedule, ScheduleParams};
use difftv::target::MixtureTarget;

#[test]
fn config_parses_with_defaults_and_rejects_bad_lists() {
    let cfg = RunConfig::from_json(
        r#"{"target": "t.json", "schedule": {"T": [10, 20, 40]}, "output": "out"}"#,
    )
    .unwrap();
    assert_eq!(cfg.schedule.c0, 2.0);
    assert_eq!(cfg.samplers.len(), 4);
    assert_eq!(cfg.density.points, 4096);
    assert_eq!(cfg.validation_steps(), 40);
    assert!(
        RunConfig::from_json(r#"{"target": "t", "schedule": {"T": [20, 10]}, "output": "o"}"#)
            .is_err()
    );
    assert!(RunConfig::from_json(
        r#"{"target": "t", "schedule": {"T": [20]}, "output": "o", "extra": 1}"#
    )
    .is_err());
}

#[test]
fn checks_are_tight_on_a_mixture() {
    let s = build_schedule(ScheduleParams::new(100, 2.0, 4.0)).unwrap();
    let t = MixtureTarget::trimodal_2d();
    assert!(jacobian_check(&t, &s, 20, 1) <= JACOBIAN_TOL);
    assert!(form_equivalence_check(&t, &s, 50, 2) <= FORM_TOL);
    assert!(score_gradient_check(&t, &s, 20, 3) <= SCORE_TOL);
}

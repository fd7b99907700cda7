use irf_bounds::complexity::{rademacher_exact, rademacher_expected, LossMatrix};
use irf_bounds::erm::{true_risk, RiskMode, WindowMode};
use irf_bounds::error::Error;
use irf_bounds::experiments::config::LossBlock;
use irf_bounds::experiments::{presets, Experiment, ExperimentConfig};
use irf_bounds::hypothesis::LossKind;
use irf_bounds::irf::{invariant_sampler, StartLaw};
use irf_bounds::metric::{SeedSpec, ZPoint};
use irf_bounds::validate::{
    coverage_experiment, validate_lemma1, validate_lemma2, validate_lemma3, validate_remark,
    ValidatorReport,
};

fn exp(name: &str, n: usize) -> Experiment {
    Experiment::from_config(ExperimentConfig::preset(name, n, 0.1, 1, 0), None).unwrap()
}

fn assert_passed(r: &ValidatorReport, what: &str) {
    assert!(
        r.passed,
        "{what}: statistic {} (SE {}) vs bound {}",
        r.statistic, r.statistic_se, r.bound
    );
}

#[test]
fn lemma3_holds_on_iid_and_example3() {
    for name in ["iid", "example3"] {
        let e = exp(name, 100);
        let r = validate_lemma3(&e.problem(), 100, 0.1, 100, SeedSpec::new(3)).unwrap();
        assert_passed(&r, name);
        assert_eq!(r.rows.len(), 100);
    }
}

#[test]
fn remark_lower_bound_on_every_preset() {
    for name in presets::PRESET_NAMES {
        let e = exp(name, 100);
        let r = validate_remark(&e.problem(), 100, 40, SeedSpec::new(8)).unwrap();
        assert_passed(&r, name);
    }
}

#[test]
fn lemmas_on_dependent_chains() {
    for name in ["example1", "affine", "affine_image"] {
        let e = exp(name, 100);
        let p = e.problem();
        assert_passed(
            &validate_lemma1(&p, 100, 0.1, 60, SeedSpec::new(1)).unwrap(),
            name,
        );
        assert_passed(
            &validate_lemma2(&p, 100, 60, SeedSpec::new(2)).unwrap(),
            name,
        );
    }
}

#[test]
fn verdicts_are_reproducible() {
    let e = exp("example1", 60);
    let p = e.problem();
    let a = validate_lemma2(&p, 60, 20, SeedSpec::new(77)).unwrap();
    let b = validate_lemma2(&p, 60, 20, SeedSpec::new(77)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows, b.rows);
    let c = coverage_experiment(&p, 60, 0.1, 20, SeedSpec::new(77)).unwrap();
    let d = coverage_experiment(&p, 60, 0.1, 20, SeedSpec::new(77)).unwrap();
    assert_eq!(c, d);
    assert_eq!(c.rows, d.rows);
}

#[test]
fn paper_literal_window_runs_and_covers() {
    let mut cfg = ExperimentConfig::preset("iid", 200, 0.1, 50, 5);
    cfg.window_mode = WindowMode::PaperLiteral;
    let e = Experiment::from_config(cfg, None).unwrap();
    let r = coverage_experiment(&e.problem(), 200, 0.1, 50, SeedSpec::new(5)).unwrap();
    assert_eq!(r.window, WindowMode::PaperLiteral);
    assert_eq!(r.rows.len(), 50);
    assert!(r.passed);
}

#[test]
fn ergodic_risk_matches_the_exact_value_on_example3() {
    let e = exp("example3", 10);
    let mode = RiskMode::Ergodic {
        tol: 1e-9,
        replicas: 16,
        length: 200,
    };
    for h in e.class.members() {
        let (exact, _) =
            true_risk(h, &e.generator, &e.env, RiskMode::Exact, SeedSpec::new(0)).unwrap();
        let (est, se) = true_risk(h, &e.generator, &e.env, mode, SeedSpec::new(1)).unwrap();
        assert!(
            (est - exact).abs() <= 3.0 * se + 1e-9,
            "{}: {est} vs {exact}",
            h.id
        );
    }
    let const0 = &e.class.members()[1];
    assert_eq!(
        true_risk(
            const0,
            &e.generator,
            &e.env,
            RiskMode::Exact,
            SeedSpec::new(0)
        )
        .unwrap()
        .0,
        0.5
    );
}

#[test]
fn stationary_example3_reduces_to_a_constant_trajectory() {
    let e = exp("example3", 10);
    let pi = invariant_sampler(&e.generator, 1e-12, 20, SeedSpec::new(0)).unwrap();
    let fixed = ZPoint::new(vec![0.5], vec![0.5]).unwrap();
    for z in pi.atoms() {
        assert!(e.generator.metric().dist(z, &fixed).unwrap() <= 1e-12);
    }
    let n = 10;
    let r = rademacher_expected(
        &e.generator,
        &e.class,
        &e.env,
        n,
        4,
        StartLaw::Stationary { tol: 1e-15 },
        1000,
        SeedSpec::new(2),
    )
    .unwrap();
    let rank1 = LossMatrix::from_class(&e.class, &vec![fixed; n], &e.env).unwrap();
    let exact = rademacher_exact(&rank1).unwrap().value;
    assert!((r.value - exact).abs() <= 1e-12, "{} vs {exact}", r.value);
}

#[test]
fn certificates_are_refused_when_a2_fails() {
    let mut cfg = ExperimentConfig::preset("example3", 50, 0.1, 5, 0);
    cfg.loss = Some(LossBlock {
        kind: LossKind::AbsClipped,
        clip: 1.0,
        ell_h: Some(0.01),
    });
    match Experiment::from_config(cfg, None) {
        Err(e @ Error::A2Violation(_)) => assert!(e.is_assumption_violation()),
        other => panic!("expected an A2 violation, got {other:?}"),
    }
}

use std::collections::BTreeMap;
use std::f64::consts::PI;

use schwarzscope::measure::{
    average_measure, correlation_decay, dn_sequence, growth_fit, iterate_dn_identity_check,
    orbit_histogram, summability_check, ulam_density, ulam_density_iterate, CorrelationOptions,
    DnSequence, Growth, SumMode, SumVerdict,
};
use schwarzscope::{fixtures, Error, MapExpr};

fn none() -> BTreeMap<String, f64> {
    BTreeMap::new()
}

fn synthetic(f: impl Fn(f64) -> f64) -> DnSequence {
    DnSequence {
        c: 0.0,
        log_d: (1..=200).map(|n| f(n as f64).ln()).collect(),
        hit_critical: None,
    }
}

#[test]
fn logistic_dn_is_four_to_the_n() {
    let dn = dn_sequence(&fixtures::logistic(), 0.5, 20).unwrap();
    for n in 1..=20 {
        let want = 4f64.powi(n as i32);
        assert!((dn.value(n) - want).abs() <= 1e-9 * want);
    }
    assert_eq!(dn.hit_critical, None);
}

#[test]
fn superattracting_orbit_hits_critical() {
    let dn = dn_sequence(&fixtures::logistic_family(2.0), 0.5, 20).unwrap();
    assert_eq!(dn.hit_critical, Some(1));
    assert!(dn.is_empty());
}

#[test]
fn orbit_into_second_critical_point() {
    let f = MapExpr::parse("-1.5*(x - x^3)", (-1.0, 1.0), &none()).unwrap();
    let c = 1.0 / 3f64.sqrt();
    let dn = dn_sequence(&f, c, 10).unwrap();
    assert_eq!(dn.hit_critical, Some(1));
    assert!(dn.is_empty());
}

#[test]
fn attracting_cycle_decays() {
    let dn = dn_sequence(&fixtures::logistic_family(3.2), 0.5, 80).unwrap();
    assert!(dn.value(80) < 1e-10);
    match growth_fit(&dn.log_d).unwrap().growth {
        Growth::Exponential { beta } => assert!(beta < 0.0),
        other => panic!("{other:?}"),
    }
    let s = summability_check(&dn, 2.0, SumMode::Thm2).unwrap();
    assert_eq!(s.verdict, SumVerdict::Divergent);
}

#[test]
fn logistic_summability() {
    let dn = dn_sequence(&fixtures::logistic(), 0.5, 50).unwrap();
    let s = summability_check(&dn, 2.0, SumMode::Thm2).unwrap();
    let limit = 1.0 / (4f64.powf(1.0 / 3.0) - 1.0);
    assert!((s.partial_sums[49] - limit).abs() < 1e-6);
    assert!((limit - 1.70240).abs() < 1e-4);
    assert_eq!(s.verdict, SumVerdict::Convergent);
    let s3 = summability_check(&dn, 2.0, SumMode::Thm3).unwrap();
    assert_eq!(s3.exponent, -0.5);
    assert_eq!(s3.verdict, SumVerdict::Convergent);
}

#[test]
fn logistic_growth_rate() {
    let dn = dn_sequence(&fixtures::logistic(), 0.5, 40).unwrap();
    match growth_fit(&dn.log_d).unwrap().growth {
        Growth::Exponential { beta } => assert!((beta - 4f64.ln()).abs() < 0.01 * 4f64.ln()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn cubic_fixture_is_polynomial() {
    match growth_fit(&synthetic(|n| n.powi(3)).log_d).unwrap().growth {
        Growth::Polynomial { gamma } => assert!((gamma - 3.0).abs() < 0.06),
        other => panic!("{other:?}"),
    }
}

#[test]
fn constant_fixture_is_subpolynomial() {
    assert_eq!(growth_fit(&synthetic(|_| 5.0).log_d).unwrap().growth, Growth::Subpolynomial);
}

#[test]
fn quadratic_growth_fails_theorem_two() {
    let s = summability_check(&synthetic(|n| n * n), 2.0, SumMode::Thm2).unwrap();
    assert_eq!(s.verdict, SumVerdict::Divergent);
}

#[test]
fn too_few_terms() {
    let dn = DnSequence { c: 0.0, log_d: vec![1.0; 3], hit_critical: None };
    assert!(matches!(growth_fit(&dn.log_d), Err(Error::TooFewTerms { .. })));
}

fn arcsine_cdf(x: f64) -> f64 {
    2.0 / PI * x.clamp(0.0, 1.0).sqrt().asin()
}

#[test]
fn logistic_acip() {
    let f = fixtures::logistic();
    let u = ulam_density(&f, 1024).unwrap();
    assert!(u.l1_to_cdf(arcsine_cdf) < 0.05);
    assert!(u.residual < 1e-3);
    let total: f64 = u.bin_masses().iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn identity_has_no_unique_acip() {
    let f = MapExpr::parse("x", (0.0, 1.0), &none()).unwrap();
    assert!(matches!(ulam_density(&f, 64), Err(Error::Degenerate(_))));
}

#[test]
fn doubling_surrogate_density_is_near_uniform() {
    // 2x mod 1 plus a small smooth bump; plain 2x collapses to 0 in floating point.
    let f = MapExpr::from_pieces(
        (0.0, 1.0),
        &none(),
        &[(0.0, 0.5, "2*x + 0.02*sin(2*pi*x)"), (0.5, 1.0, "2*x - 1 + 0.02*sin(2*pi*x)")],
    )
    .unwrap();
    let u = ulam_density(&f, 512).unwrap();
    assert!(u.residual < 1e-3);
    assert!(u.l1_to_cdf(|x| x) < 0.05);
    let hist = orbit_histogram(&f, 2_000_000, 512, 0).unwrap();
    assert!(hist.l1_distance(&u).unwrap() < 0.05);
}

#[test]
fn averaging_once_is_identity() {
    let f = fixtures::logistic();
    let u = ulam_density(&f, 256).unwrap();
    let avg = average_measure(&f, &u, 1).unwrap();
    assert_eq!(avg.mass, u.mass);
    assert_eq!(avg.density, u.density);
}

#[test]
fn averaging_second_iterate_density() {
    let f = fixtures::logistic();
    let d2 = ulam_density_iterate(&f, 2, 1024).unwrap();
    let avg = average_measure(&f, &d2, 2).unwrap();
    let d1 = ulam_density(&f, 1024).unwrap();
    assert!(avg.residual < 5e-3);
    assert!(avg.l1_distance(&d1).unwrap() < 0.02);
}

#[test]
fn averaging_rejects_non_invariant_input() {
    let f = fixtures::logistic();
    let mut u = ulam_density(&f, 256).unwrap();
    let n = u.mass.len();
    u.mass = vec![1.0 / n as f64; n];
    assert!(matches!(average_measure(&f, &u, 2), Err(Error::Precondition(_))));
}

fn quick() -> CorrelationOptions {
    CorrelationOptions { bins: 1024, streams: 8, steps_per_stream: 200_000, seed: 7 }
}

#[test]
fn logistic_variance() {
    let r = correlation_decay(&fixtures::logistic(), &|x| x, &|x| x, 3, &quick()).unwrap();
    let c0 = &r.rows[0];
    assert!((c0.operator - 0.125).abs() < 1e-3, "{}", c0.operator);
    assert!((c0.birkhoff - 0.125).abs() < 5e-3);
    for row in &r.rows[1..] {
        assert!(row.operator.abs() < 5e-3, "C_{} = {}", row.n, row.operator);
        assert!(row.coherent, "row {}", row.n);
    }
}

#[test]
fn constant_observables_do_not_correlate() {
    let r = correlation_decay(&fixtures::logistic(), &|_| 2.0, &|_| -3.0, 4, &quick()).unwrap();
    for row in &r.rows {
        assert!(row.operator.abs() < 1e-12 && row.birkhoff.abs() < 1e-12);
    }
}

#[test]
fn identity_for_second_iterate() {
    let f = fixtures::logistic();
    let c_tilde = (1.0 - 0.5f64.sqrt()) / 2.0;
    let report = iterate_dn_identity_check(&f, 2, c_tilde, 10).unwrap();
    assert!(report.hypothesis_ok);
    assert_eq!(report.m, Some(1));
    assert!(!report.rows.is_empty());
    assert!(report.max_rel_err < 1e-8, "{}", report.max_rel_err);
}

#[test]
fn identity_for_first_iterate_is_exact() {
    let f = fixtures::logistic_family(3.9);
    let report = iterate_dn_identity_check(&f, 1, 0.5, 10).unwrap();
    assert_eq!(report.m, Some(0));
    assert!(report.rows.iter().all(|r| r.lhs == r.rhs));
}

#[test]
fn identity_hypothesis_failure() {
    let f = MapExpr::parse("-1.5*(x - x^3)", (-1.0, 1.0), &none()).unwrap();
    let report = iterate_dn_identity_check(&f, 2, 1.0 / 3f64.sqrt(), 10).unwrap();
    assert!(!report.hypothesis_ok);
    assert!(report.reason.is_some());
}

use std::collections::BTreeMap;

use proptest::prelude::*;

use schwarzscope::certify::{
    partition_certificate, worst_sequence, CellBound, Partition, Rigor, TransitionMatrix,
};
use schwarzscope::measure::{
    average_measure_with, correlation_decay, dn_sequence, iterate_residual, summability_check,
    ulam_density_with, CorrelationOptions, PowerOptions, SumMode, SumVerdict, UlamGrid,
    UlamOperator,
};
use schwarzscope::orbits::{
    critical_interval, critical_order, find_periodic_orbits, multiplier, singer_census, Stability,
};
use schwarzscope::schwarzian::{
    convexity_scan, cr_expansion_check, schwarzian_at, schwarzian_iterate, CrossRatioPair, Verdict,
};
use schwarzscope::{fixtures, IntervalBox, MapExpr};

fn none() -> BTreeMap<String, f64> {
    BTreeMap::new()
}

fn poly_text(coefs: &[f64]) -> String {
    coefs
        .iter()
        .enumerate()
        .map(|(k, c)| format!("({c:e})*x^{k}"))
        .collect::<Vec<_>>()
        .join(" + ")
}

fn compose(f: &MapExpr, k: usize) -> MapExpr {
    let e = &f.pieces[0].expr;
    let mut acc = e.clone();
    for _ in 1..k {
        acc = e.substitute(&acc);
    }
    MapExpr::from_exprs((f.lo, f.hi), vec![(f.lo, f.hi, acc)]).unwrap()
}

/// Random self-map 1/2 + Σ c_i x^i with Σ|c_i| < 1/2.
fn self_map_coefs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.12f64..0.12, 4..=5)
}

fn self_map(coefs: &[f64]) -> MapExpr {
    let text = format!("0.5 + {}", poly_text(coefs));
    MapExpr::parse(&text, (0.0, 1.0), &none()).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn jets_match_finite_differences(coefs in prop::collection::vec(-2.0f64..2.0, 4..=5), x in 0.1f64..0.9) {
        let f = MapExpr::parse(&poly_text(&coefs), (0.0, 1.0), &none()).unwrap();
        let v = |t: f64| f.eval(t).unwrap();
        let j = f.eval_jet(x).unwrap();
        let h1 = 1e-5;
        let d1 = (v(x + h1) - v(x - h1)) / (2.0 * h1);
        let h2 = 1e-4;
        let d2 = (v(x + h2) - 2.0 * v(x) + v(x - h2)) / (h2 * h2);
        let h3 = 1e-3;
        let d3 = (v(x + 2.0 * h3) - 2.0 * v(x + h3) + 2.0 * v(x - h3) - v(x - 2.0 * h3)) / (2.0 * h3.powi(3));
        prop_assert!(rel_close(j.v1, d1, 1e-5), "v1 {} vs {}", j.v1, d1);
        prop_assert!(rel_close(j.v2, d2, 1e-5), "v2 {} vs {}", j.v2, d2);
        prop_assert!(rel_close(j.v3, d3, 1e-5), "v3 {} vs {}", j.v3, d3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn enclosures_are_sound(which in 0usize..4, a in 0.0f64..1.0, w in 0.0f64..0.2, t in 0.0f64..=1.0) {
        let f = [fixtures::logistic(), fixtures::f78(), fixtures::g17(), fixtures::logistic_family(3.7)][which].clone();
        let lo = f.lo + f.width() * a;
        let hi = (lo + f.width() * w).min(f.hi);
        let cell = IntervalBox::new(lo, hi);
        let x = (lo + (hi - lo) * t).min(hi);
        let j = f.eval_jet(x).unwrap();
        prop_assert!(f.eval_interval(cell, 0).unwrap().contains(j.v0));
        prop_assert!(f.eval_interval(cell, 1).unwrap().contains(j.v1));
    }
}

#[test]
fn continuity_check() {
    assert!(fixtures::f78().is_c2().unwrap());
    let broken = MapExpr::from_pieces((0.0, 1.0), &none(), &[(0.0, 0.5, "x"), (0.5, 1.0, "x + 0.01")]).unwrap();
    assert!(!broken.is_c2().unwrap());
    let kink = MapExpr::from_pieces((0.0, 1.0), &none(), &[(0.0, 0.5, "x"), (0.5, 1.0, "0.5 + 2*(x-0.5)")]).unwrap();
    assert!(!kink.is_c2().unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn chain_rule_matches_composition(coefs in self_map_coefs(), x in 0.01f64..0.99, k in 2usize..=3) {
        let f = self_map(&coefs);
        let got = schwarzian_iterate(&f, k, x).unwrap();
        let Some(got) = got.value else { return Ok(()) };
        let Ok(want) = schwarzian_at(&compose(&f, k), x) else { return Ok(()) };
        prop_assert!((got - want).abs() <= 1e-8 * (1.0 + want.abs()), "{} vs {}", got, want);
    }

    #[test]
    fn mobius_is_annihilated(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -1.0f64..1.0, x in 0.0f64..1.0) {
        // d = |c| + 1 keeps the pole off [0, 1]
        let d = c.abs() + 1.0;
        prop_assume!((a * d - b * c).abs() > 1e-3);
        let f = MapExpr::parse(&format!("({a:e}*x + {b:e})/({c:e}*x + {d:e})"), (0.0, 1.0), &none()).unwrap();
        prop_assert!(schwarzian_at(&f, x).unwrap().abs() < 1e-10);
    }

    #[test]
    fn mobius_preserves_cross_ratio(a in 0.5f64..3.0, b in -1.0f64..1.0, c in -0.5f64..1.0, mut p in prop::array::uniform4(0.0f64..1.0)) {
        let d = c.abs() + 1.0;
        prop_assume!((a * d - b * c).abs() > 1e-2);
        p.sort_by(|u, v| u.partial_cmp(v).unwrap());
        prop_assume!(p.windows(2).all(|w| w[1] - w[0] > 1e-3));
        let f = MapExpr::parse(&format!("({a:e}*x + {b:e})/({c:e}*x + {d:e})"), (0.0, 1.0), &none()).unwrap();
        let pair = CrossRatioPair::new((p[1], p[2]), (p[0], p[3])).unwrap();
        let r = cr_expansion_check(&f, &pair).unwrap();
        prop_assert!((r.after - r.before).abs() <= 1e-9 * r.before);
    }

    #[test]
    fn negative_schwarzian_expands_cross_ratio(a in 3.0f64..4.0, left in any::<bool>(), mut p in prop::array::uniform4(0.01f64..0.49)) {
        let f = fixtures::logistic_family(a);
        p.sort_by(|u, v| u.partial_cmp(v).unwrap());
        prop_assume!(p.windows(2).all(|w| w[1] - w[0] > 1e-3));
        if !left {
            p = [1.0 - p[3], 1.0 - p[2], 1.0 - p[1], 1.0 - p[0]];
        }
        let pair = CrossRatioPair::new((p[1], p[2]), (p[0], p[3])).unwrap();
        prop_assert!(cr_expansion_check(&f, &pair).unwrap().expanded);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn convexity_survives_doubling(a in 3.0f64..4.0) {
        let f = fixtures::logistic_family(a);
        if convexity_scan(&f, 1, 512).verdict == Verdict::Pass {
            prop_assert_eq!(convexity_scan(&f, 2, 512).verdict, Verdict::Pass);
        }
    }

    #[test]
    fn certificate_implies_convexity(a in 1.65f64..1.75) {
        let mut params = BTreeMap::new();
        params.insert("a".to_string(), a);
        let g = MapExpr::parse("1-a*tan(pi*x^2/4)", (-1.0, 1.0), &params).unwrap();
        let out = partition_certificate(&g, &fixtures::g17_partition(), 2, Rigor::Interval).unwrap();
        if let Some(cert) = out.certificate() {
            prop_assert_eq!(convexity_scan(&g, cert.order_bound, 1024).verdict, Verdict::Pass);
        }
    }
}

fn system() -> impl Strategy<Value = (TransitionMatrix, Vec<CellBound>)> {
    (1usize..=5).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::collection::vec(prop::bool::weighted(0.6), n), n),
            prop::collection::vec((-5.0f64..2.0, 0.0f64..3.0, 0.0f64..3.0), n),
        )
            .prop_map(|(a, b)| {
                let bounds = b.into_iter().map(|(t, m, e)| CellBound { t, m, big_m: m + e }).collect();
                (TransitionMatrix { a }, bounds)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn pruning_is_safe((matrix, bounds) in system(), k in 1usize..=4) {
        let full = worst_sequence(&matrix, &bounds, k, false);
        let pruned = worst_sequence(&matrix, &bounds, k, true);
        prop_assert_eq!(full.worst_sum, pruned.worst_sum);
        prop_assert_eq!(full.worst_sum < 0.0, pruned.worst_sum < 0.0);
    }

    #[test]
    fn extra_transitions_never_help((matrix, bounds) in system(), k in 1usize..=4, extra in prop::collection::vec((0usize..5, 0usize..5), 0..6)) {
        let n = matrix.n();
        let mut wider = matrix.clone();
        for (i, j) in extra {
            wider.a[i % n][j % n] = true;
        }
        let base = worst_sequence(&matrix, &bounds, k, true);
        let more = worst_sequence(&wider, &bounds, k, true);
        if base.worst_sequence.is_empty() {
            return Ok(());
        }
        prop_assert!(more.worst_sum >= base.worst_sum);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn orbits_close_and_multipliers_rotate(a in 2.9f64..4.0) {
        let f = fixtures::logistic_family(a);
        for o in find_periodic_orbits(&f, 4).unwrap() {
            let p = o.points.len();
            for i in 0..p {
                let y = f.eval(o.points[i]).unwrap();
                prop_assert!((y - o.points[(i + 1) % p]).abs() <= 1e-9 * f.width());
            }
            let prod: f64 = o.points.iter().map(|&x| f.eval_jet(x).unwrap().v1).product();
            prop_assert!(rel_close(o.multiplier, prod, 1e-8));
            let mut rotated = o.points.clone();
            rotated.rotate_left(1);
            prop_assert!(rel_close(multiplier(&f, &rotated).unwrap(), o.multiplier, 1e-8));
        }
    }

    #[test]
    fn critical_interval_is_forward_invariant(a in 3.5f64..4.0) {
        let f = fixtures::logistic_family(a);
        let ci = critical_interval(&f, 1000).unwrap();
        if ci.converged {
            let (_, inside) = f.range_within(ci.as_box(), ci.as_box()).unwrap();
            prop_assert!(inside);
        }
    }

    #[test]
    fn iterate_keeps_critical_order(a in 3.0f64..4.0) {
        let f = fixtures::logistic_family(a);
        let c_tilde = (1.0 - (1.0 - 2.0 / a).sqrt()) / 2.0;
        let f2 = compose(&f, 2);
        let base = critical_order(&f, 0.5).unwrap().order;
        let lifted = critical_order(&f2, c_tilde).unwrap().order;
        prop_assert!((base - lifted).abs() < 1e-3, "{} vs {}", base, lifted);
    }

    #[test]
    fn dn_is_multiplicative(a in 3.6f64..4.0) {
        let f = fixtures::logistic_family(a);
        let dn = dn_sequence(&f, 0.5, 40).unwrap();
        let mut x = f.eval(0.5).unwrap();
        for n in 1..dn.len() {
            x = f.eval(x).unwrap();
            let step = f.eval_jet(x).unwrap().v1.abs();
            prop_assert!(rel_close(dn.value(n + 1), dn.value(n) * step, 1e-9));
        }
    }

    #[test]
    fn ulam_rows_are_stochastic(a in 3.6f64..4.0, bins in 32usize..256) {
        let f = fixtures::logistic_family(a);
        let op = UlamOperator::build(&f, UlamGrid::for_map(&f, bins).unwrap()).unwrap();
        for row in &op.rows {
            let s: f64 = row.iter().map(|(_, w)| w).sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
        let mut v = op.lebesgue();
        for _ in 0..20 {
            v = op.push_forward(&v);
            prop_assert!(v.iter().all(|&m| m >= 0.0));
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn averaging_is_invariant(a in 3.7f64..4.0) {
        let f = fixtures::logistic_family(a);
        let op = UlamOperator::build(&f, UlamGrid::for_map(&f, 256).unwrap()).unwrap();
        let d2 = match ulam_density_with(&op, 2, &PowerOptions::default()) {
            Ok(d) => d,
            Err(_) => return Ok(()),
        };
        let input_residual = iterate_residual(&op, &d2.mass, 2);
        let avg = average_measure_with(&op, &d2, 2).unwrap();
        prop_assert!(avg.residual <= 5.0 * input_residual + 1e-3);
    }
}

#[test]
fn census_bound_for_certified_maps() {
    for i in 0..100 {
        let a = 2.5 + 1.5 * i as f64 / 99.0;
        let f = fixtures::logistic_family(a);
        let out = partition_certificate(&f, &Partition::uniform(0.0, 1.0, 4), 2, Rigor::Interval).unwrap();
        if out.certificate().is_none() {
            continue;
        }
        let report = singer_census(&f, &find_periodic_orbits(&f, 4).unwrap()).unwrap();
        let count = report.orbits.iter().filter(|o| o.class == Stability::Attracting).count();
        assert!(count <= report.critical_points.len() + 2, "a = {a}");
    }
}

#[test]
fn attracting_orbits_forbid_summability() {
    for a in [2.8, 3.2, 3.5, 3.83, 3.1, 3.45] {
        let f = fixtures::logistic_family(a);
        let report = singer_census(&f, &find_periodic_orbits(&f, 4).unwrap()).unwrap();
        let non_repelling = report.orbits.iter().any(|o| o.class != Stability::Repelling);
        if !non_repelling {
            continue;
        }
        let dn = dn_sequence(&f, 0.5, 80).unwrap();
        let v = summability_check(&dn, 2.0, SumMode::Thm2).map(|s| s.verdict).unwrap_or(SumVerdict::Undetermined);
        assert_ne!(v, SumVerdict::Convergent, "a = {a}");
    }
}

#[test]
fn estimators_agree_on_logistic() {
    let r = correlation_decay(&fixtures::logistic(), &|x| x, &|x| x * x, 20, &CorrelationOptions::default()).unwrap();
    for row in &r.rows {
        assert!(row.coherent, "n = {}: {} vs {}", row.n, row.operator, row.birkhoff);
    }
}

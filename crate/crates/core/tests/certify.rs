use std::collections::BTreeMap;

use schwarzscope::certify::{
    build_transition_matrix, compute_cell_bounds, mobius_certificate, partition_certificate,
    verify_certificate, Partition, Rigor,
};
use schwarzscope::{fixtures, MapExpr};

fn none() -> BTreeMap<String, f64> {
    BTreeMap::new()
}

#[test]
fn logistic_two_cells_are_full() {
    let f = fixtures::logistic();
    let m = build_transition_matrix(&f, &Partition::new(vec![0.0, 0.5, 1.0]).unwrap()).unwrap();
    assert!(m.a.iter().flatten().all(|&b| b));
}

#[test]
fn g17_paper_partition_matrix() {
    let expected: [&[usize]; 9] = [
        &[1, 2, 3],
        &[3, 4, 5],
        &[5, 6, 7],
        &[7, 8],
        &[8],
        &[7, 8],
        &[5, 6, 7],
        &[3, 4, 5],
        &[1, 2, 3],
    ];
    let m = build_transition_matrix(&fixtures::g17(), &fixtures::g17_partition()).unwrap();
    for (i, row) in expected.iter().enumerate() {
        let got: Vec<usize> = m.successors(i).collect();
        assert_eq!(&got, row, "row {i}");
    }
}

#[test]
fn identity_matrix_pattern() {
    let f = MapExpr::parse("x", (0.0, 1.0), &none()).unwrap();
    let p = Partition::uniform(0.0, 1.0, 5);
    let m = build_transition_matrix(&f, &p).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            assert_eq!(m.a[i][j], i.abs_diff(j) <= 1, "({i}, {j})");
        }
    }
}

#[test]
fn logistic_cell_is_strictly_negative() {
    let f = fixtures::logistic();
    let p = Partition::new(vec![0.0, 0.6, 0.9, 1.0]).unwrap();
    let b = compute_cell_bounds(&f, &p, Rigor::Interval).unwrap();
    // S = −6/(1 − 2x)² ≤ −6/0.64 on [0.6, 0.9]
    assert!(b.cells[1].t <= -9.37 && b.cells[1].t > -9.38);
}

#[test]
fn affine_cell_bounds() {
    let f = fixtures::f78();
    let p = Partition::new(vec![0.0, 0.2, 0.5, 1.0]).unwrap();
    let b = compute_cell_bounds(&f, &p, Rigor::Interval).unwrap();
    for c in &b.cells[..2] {
        assert!(c.t.abs() < 1e-300, "T = {}", c.t);
        assert!((c.m - 1.0).abs() < 1e-12 && (c.big_m - 1.0).abs() < 1e-12);
    }
}

#[test]
fn g17_cell_matches_sampling() {
    let g = fixtures::g17();
    let p = Partition::new(vec![-1.0, 0.18, 0.47, 1.0]).unwrap();
    let cell = compute_cell_bounds(&g, &p, Rigor::Interval).unwrap().cells[1];
    let mut s_max = f64::NEG_INFINITY;
    let (mut d_min, mut d_max) = (f64::INFINITY, 0.0f64);
    for i in 0..=10_000 {
        let x = 0.18 + 0.29 * i as f64 / 10_000.0;
        let j = g.eval_jet(x).unwrap();
        s_max = s_max.max(schwarzscope::schwarzian::schwarzian_of_jet(&j));
        d_min = d_min.min(j.v1 * j.v1);
        d_max = d_max.max(j.v1 * j.v1);
    }
    assert!(cell.t >= s_max && cell.t <= s_max + 0.05 * s_max.abs());
    assert!(cell.m <= d_min && cell.m >= d_min / 1.05);
    assert!(cell.big_m >= d_max && cell.big_m <= d_max * 1.05);
}

#[test]
fn sampled_mode_inflates() {
    let g = fixtures::g17();
    let b = compute_cell_bounds(&g, &fixtures::g17_partition(), Rigor::Sampled).unwrap();
    let c = &b.cells[6];
    assert!(c.t < 0.0 && c.m > 0.0 && c.big_m > c.m);
}

#[test]
fn g17_certifies_at_order_two() {
    let g = fixtures::g17();
    let out = partition_certificate(&g, &fixtures::g17_partition(), 2, Rigor::Interval).unwrap();
    let cert = out.certificate().expect("certified");
    assert_eq!(cert.order_bound, 2);
    assert!(cert.worst_sum < 0.0);
    assert_eq!(cert.worst_sequence.len(), 2);
    assert!(verify_certificate(&g, cert));

    let mut tampered = cert.clone();
    tampered.order_bound = 1;
    assert!(!verify_certificate(&g, &tampered));
}

#[test]
fn g17_refuses_at_order_one() {
    let g = fixtures::g17();
    let out = partition_certificate(&g, &fixtures::g17_partition(), 1, Rigor::Interval).unwrap();
    let r = out.refusal().expect("refused");
    assert!(r.sum >= 0.0);
    assert_eq!(r.blocking_sequence.len(), 1);
}

#[test]
fn negative_everywhere_certifies_at_one() {
    let f = fixtures::logistic();
    let out = partition_certificate(&f, &Partition::uniform(0.0, 1.0, 4), 3, Rigor::Interval).unwrap();
    let cert = out.certificate().expect("certified");
    assert_eq!(cert.order_bound, 1);
    assert_eq!(cert.worst_sequence.len(), 1);
}

#[test]
fn affine_piece_blocks_order_one() {
    let f = fixtures::f78();
    let out = partition_certificate(&f, &Partition::uniform(0.0, 1.0, 8), 1, Rigor::Interval).unwrap();
    let r = out.refusal().expect("refused");
    assert!(r.sum.abs() < 1e-300);
}

#[test]
fn f78_mobius_certificate() {
    let f = fixtures::f78();
    let out = mobius_certificate(&f, 5).unwrap();
    let cert = out.certificate().expect("certified");
    assert_eq!(cert.order_bound, 3);
    assert_eq!(cert.escape_bound, Some(2));
    assert_eq!(cert.mobius_pieces.as_deref(), Some(&[(0.0, 0.5)][..]));
    assert!(verify_certificate(&f, cert));

    let mut extended = cert.clone();
    extended.mobius_pieces = Some(vec![(0.0, 0.6)]);
    assert!(!verify_certificate(&f, &extended));
}

#[test]
fn f78_mobius_needs_order_three() {
    let out = mobius_certificate(&fixtures::f78(), 2).unwrap();
    assert!(out.refusal().is_some());
}

#[test]
fn logistic_mobius_certificate_is_order_one() {
    let out = mobius_certificate(&fixtures::logistic(), 3).unwrap();
    let cert = out.certificate().expect("certified");
    assert_eq!(cert.order_bound, 1);
    assert_eq!(cert.mobius_pieces.as_deref(), Some(&[][..]));
}

#[test]
fn invariant_mobius_piece_is_refused() {
    let f = MapExpr::from_pieces(
        (0.0, 1.0),
        &none(),
        &[(0.0, 0.2, "0.2 + x^2"), (0.2, 0.4, "x"), (0.4, 1.0, "1 - (x - 0.4)^2")],
    )
    .unwrap();
    let out = mobius_certificate(&f, 6).unwrap();
    assert!(out.refusal().is_some());
}

#[test]
fn certificate_json_round_trip() {
    let g = fixtures::g17();
    let out = partition_certificate(&g, &fixtures::g17_partition(), 2, Rigor::Interval).unwrap();
    let text = serde_json::to_string(&out).unwrap();
    let back: schwarzscope::certify::Outcome = serde_json::from_str(&text).unwrap();
    let cert = back.certificate().unwrap();
    assert_eq!(cert.order_bound, 2);
    assert!(verify_certificate(&g, cert));
}

#[test]
fn partition_must_cover_domain() {
    assert!(Partition::for_map(&fixtures::g17(), vec![-1.0, 0.0, 0.9]).is_err());
    assert!(Partition::new(vec![0.0, 0.5, 0.4, 1.0]).is_err());
}

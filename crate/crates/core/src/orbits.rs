//! Critical points, critical intervals, periodic orbits and the orbit census.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::MapExpr;
use crate::interval::IntervalBox;

pub const CRITICAL_GRID: usize = 4096;
pub const NEUTRAL_BAND: f64 = 1e-6;
pub const BURN_IN: usize = 1_000;
pub const BASIN_STEPS: usize = 100_000;
pub const MATCH_RADIUS: f64 = 1e-6;
pub const LEMMA33_ORBIT: usize = 10_000;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub c: f64,
    pub order: f64,
    pub constant: f64,
    /// Signs of f′ just left and right of c.
    pub side_slopes: (i8, i8),
    pub fit_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderFit {
    pub order: f64,
    pub constant: f64,
    pub max_residual: f64,
    pub points: usize,
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn derivative(map: &MapExpr, x: f64) -> f64 {
    map.eval_jet(x).map(|j| j.v1).unwrap_or(f64::NAN)
}

/// Locations of sign changes of f′, refined by bisection.
///
/// Isolated zeros on the grid are treated as part of the surrounding
/// bracket; runs of two or more zero samples are flat regions and ignored.
/// Roots where |f′| is not small are derivative jumps at piece boundaries
/// and are discarded.
pub fn critical_roots(map: &MapExpr) -> Vec<f64> {
    let n = CRITICAL_GRID;
    let h = map.width() / n as f64;
    let xs: Vec<f64> = (0..=n)
        .map(|i| if i == n { map.hi } else { map.lo + h * i as f64 })
        .collect();
    let ds: Vec<f64> = xs.iter().map(|&x| derivative(map, x)).collect();
    let scale = ds
        .iter()
        .filter(|d| d.is_finite())
        .fold(0.0f64, |m, d| m.max(d.abs()))
        .max(f64::MIN_POSITIVE);

    let mut roots: Vec<f64> = Vec::new();
    let mut prev: Option<(usize, i8)> = None;
    let mut zeros = 0usize;
    for i in 0..=n {
        let d = ds[i];
        if !d.is_finite() {
            prev = None;
            zeros = 0;
            continue;
        }
        let s = sign(d);
        if s == 0 {
            zeros += 1;
            if zeros >= 2 {
                prev = None;
            }
            continue;
        }
        if let Some((p, ps)) = prev {
            if ps != s && zeros <= 1 {
                if let Some(r) = bisect_root(map, xs[p], xs[i], ps, scale) {
                    roots.push(r);
                }
            }
        }
        prev = Some((i, s));
        zeros = 0;
    }
    let tol = 1e-9 * map.width();
    roots.dedup_by(|a, b| (*a - *b).abs() <= tol);
    roots
}

fn bisect_root(map: &MapExpr, mut a: f64, mut b: f64, sa: i8, scale: f64) -> Option<f64> {
    let tol = 1e-12 * map.width().max(1.0);
    let mut mid = 0.5 * (a + b);
    while b - a > tol {
        mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let d = derivative(map, mid);
        if !d.is_finite() {
            return None;
        }
        let s = sign(d);
        if s == 0 {
            break;
        }
        if s == sa {
            a = mid;
        } else {
            b = mid;
        }
        mid = 0.5 * (a + b);
    }
    let d = derivative(map, mid);
    if d.is_finite() && d.abs() <= 1e-6 * scale {
        Some(mid)
    } else {
        None
    }
}

/// Fits log|f′(x)| ≈ log L + (ℓ−1) log|x−c| on the ladder c ± 2^{−j},
/// j = 8..24.
pub fn critical_order(map: &MapExpr, c: f64) -> Result<OrderFit> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for j in 8..=24 {
        let h = (2.0f64).powi(-j);
        for s in [-1.0, 1.0] {
            let x = c + s * h;
            if x < map.lo || x > map.hi {
                continue;
            }
            let d = derivative(map, x);
            if !d.is_finite() {
                continue;
            }
            if d == 0.0 {
                return Err(Error::FlatCritical {
                    c,
                    reason: format!("f'({x}) underflows to zero"),
                });
            }
            pts.push((h.ln(), d.abs().ln()));
        }
    }
    if pts.len() < 6 {
        return Err(Error::FlatCritical {
            c,
            reason: "too few ladder points".into(),
        });
    }
    let (slope, icept) = least_squares(&pts);
    let max_residual = pts
        .iter()
        .map(|(t, y)| (y - (icept + slope * t)).abs())
        .fold(0.0, f64::max);
    let half = pts.len() / 2;
    let (s1, _) = least_squares(&pts[..half]);
    let (s2, _) = least_squares(&pts[half..]);
    let order = slope + 1.0;
    let drift = (s1 - s2).abs();
    if !order.is_finite() || order <= 1.0 + 1e-3 || drift > 0.05 * order {
        return Err(Error::FlatCritical {
            c,
            reason: format!("order estimate {order:.4} with ladder drift {drift:.3e}"),
        });
    }
    Ok(OrderFit {
        order,
        constant: icept.exp(),
        max_residual,
        points: pts.len(),
    })
}

pub(crate) fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Critical points with fitted orders. An empty result is not an error.
pub fn find_critical_points(map: &MapExpr) -> Result<Vec<CriticalPoint>> {
    let eps = 1e-6 * map.width();
    critical_roots(map)
        .into_iter()
        .map(|c| {
            let fit = critical_order(map, c)?;
            let left = sign(derivative(map, (c - eps).max(map.lo)));
            let right = sign(derivative(map, (c + eps).min(map.hi)));
            Ok(CriticalPoint {
                c,
                order: fit.order,
                constant: fit.constant,
                side_slopes: (left, right),
                fit_residual: fit.max_residual,
            })
        })
        .collect()
}

/// Whether `x` is inside the guard zone of a critical point, judged from the
/// local jet: |f′| ≤ guard·|f″| estimates the distance to the nearest zero.
pub fn in_guard_zone(map: &MapExpr, x: f64, guard: f64) -> Result<bool> {
    let j = map.eval_jet(x)?;
    Ok(j.v1 == 0.0 || j.v1.abs() <= guard * j.v2.abs())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalInterval {
    pub a: f64,
    pub b: f64,
    pub horizon: usize,
    pub converged: bool,
    pub degenerate: bool,
    pub critical_points: Vec<f64>,
}

impl CriticalInterval {
    pub fn as_box(&self) -> IntervalBox {
        IntervalBox::new(self.a, self.b)
    }
}

/// Hull of all critical orbits f^n(c), 0 ≤ n ≤ horizon. Falls back to the
/// whole domain (unconverged) when the map has no critical points.
pub fn critical_interval(map: &MapExpr, horizon: usize) -> Result<CriticalInterval> {
    let crit = critical_roots(map);
    if crit.is_empty() {
        return Ok(CriticalInterval {
            a: map.lo,
            b: map.hi,
            horizon,
            converged: false,
            degenerate: false,
            critical_points: crit,
        });
    }
    let mut a = f64::INFINITY;
    let mut b = f64::NEG_INFINITY;
    let mut last_change = 0usize;
    for &c in &crit {
        let mut x = c;
        for n in 0..=horizon {
            if x < a {
                a = x;
                last_change = last_change.max(n);
            }
            if x > b {
                b = x;
                last_change = last_change.max(n);
            }
            if n < horizon {
                x = map.eval(x)?;
            }
        }
    }
    let tol = 1e-9 * map.width();
    let stable = horizon - last_change >= horizon / 4;
    let (_, invariant) = map.range_within(IntervalBox::new(a, b), IntervalBox::new(a, b))?;
    Ok(CriticalInterval {
        a,
        b,
        horizon,
        converged: stable && invariant,
        degenerate: (b - a) <= tol,
        critical_points: crit,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Attracting,
    Repelling,
    Neutral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "x", rename_all = "lowercase")]
pub enum Seed {
    Critical(f64),
    Boundary(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub points: Vec<f64>,
    pub period: usize,
    pub multiplier: f64,
    pub class: Stability,
    pub basin_evidence: Option<Seed>,
}

pub fn classify(multiplier: f64) -> Stability {
    let m = multiplier.abs();
    if m < 1.0 - NEUTRAL_BAND {
        Stability::Attracting
    } else if m > 1.0 + NEUTRAL_BAND {
        Stability::Repelling
    } else {
        Stability::Neutral
    }
}

/// Multiplier of the orbit through `points` by the chain rule.
pub fn multiplier(map: &MapExpr, points: &[f64]) -> Result<f64> {
    let mut m = 1.0;
    for &x in points {
        m *= map.eval_jet(x)?.v1;
    }
    Ok(m)
}

fn roots_of_iterate(map: &MapExpr, p: usize) -> Result<Vec<f64>> {
    let cells = 1usize << (12 + p);
    let h = map.width() / cells as f64;
    let node = |i: usize| if i == cells { map.hi } else { map.lo + h * i as f64 };
    let g = |x: f64| map.iterate(x, p).map(|y| y - x).unwrap_or(f64::NAN);
    let vals: Vec<f64> = (0..=cells).into_par_iter().map(|i| g(node(i))).collect();

    let mut brackets = Vec::new();
    let mut exact = Vec::new();
    for i in 0..=cells {
        let v = vals[i];
        if v == 0.0 {
            exact.push(node(i));
            continue;
        }
        if i > 0 {
            let u = vals[i - 1];
            if u.is_finite() && v.is_finite() && u != 0.0 && (u < 0.0) != (v < 0.0) {
                brackets.push((node(i - 1), node(i), u < 0.0));
            }
        }
    }
    if brackets.len() + exact.len() > cells / 8 {
        return Err(Error::RootOverflow {
            period: p,
            sign_changes: brackets.len() + exact.len(),
            cells,
        });
    }
    let tol = 1e-9 * map.width();
    let mut roots: Vec<f64> = brackets
        .par_iter()
        .filter_map(|&(mut a, mut b, neg_at_a)| {
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                let v = g(m);
                if !v.is_finite() {
                    return None;
                }
                if v == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if (v < 0.0) == neg_at_a {
                    a = m;
                } else {
                    b = m;
                }
            }
            let r = if g(a).abs() <= g(b).abs() { a } else { b };
            // Sign changes across discontinuities are not roots.
            (g(r).abs() <= tol).then_some(r)
        })
        .collect();
    roots.extend(exact);
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * map.width());
    Ok(roots)
}

/// Periodic orbits of minimal period ≤ `p_max` detected by sign changes of
/// f^p(x) − x on a grid of 2^{12+p} cells.
pub fn find_periodic_orbits(map: &MapExpr, p_max: usize) -> Result<Vec<PeriodicOrbit>> {
    assert!((1..=12).contains(&p_max), "p_max must be in 1..=12");
    let w = map.width();
    let mut out = Vec::new();
    for p in 1..=p_max {
        let roots = roots_of_iterate(map, p)?;
        let minimal: Vec<f64> = roots
            .into_iter()
            .filter(|&r| {
                (1..p).filter(|q| p % q == 0).all(|q| {
                    map.iterate(r, q)
                        .map(|y| (y - r).abs() > 1e-8 * w)
                        .unwrap_or(true)
                })
            })
            .collect();
        let mut used = vec![false; minimal.len()];
        for i in 0..minimal.len() {
            if used[i] {
                continue;
            }
            let mut pts = Vec::with_capacity(p);
            let mut x = minimal[i];
            for step in 0..p {
                if step > 0 {
                    x = map.eval(x)?;
                }
                let nearest = minimal
                    .iter()
                    .enumerate()
                    .min_by(|a, b| (a.1 - x).abs().partial_cmp(&(b.1 - x).abs()).unwrap());
                if let Some((j, &r)) = nearest {
                    if (r - x).abs() <= 1e-7 * w {
                        used[j] = true;
                        x = r;
                    }
                }
                pts.push(x);
            }
            let start = pts
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(k, _)| k)
                .unwrap();
            pts.rotate_left(start);
            let m = multiplier(map, &pts)?;
            out.push(PeriodicOrbit {
                points: pts,
                period: p,
                multiplier: m,
                class: classify(m),
                basin_evidence: None,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    AttractingWithoutEvidence { orbit: usize },
    InteriorNeutralWithoutEvidence { orbit: usize },
    BoundExceeded { count: usize, bound: usize },
    EndpointUnexplained { endpoint: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EndpointCheck {
    pub endpoint: f64,
    pub attracting_low_period: bool,
    pub on_critical_orbit: bool,
    pub attracts_critical: bool,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CensusReport {
    pub critical_points: Vec<f64>,
    pub bound: usize,
    pub attracting: usize,
    pub neutral: usize,
    pub boundary_neutral: usize,
    pub orbits: Vec<PeriodicOrbit>,
    pub critical_interval: CriticalInterval,
    pub lemma33: Vec<EndpointCheck>,
    pub violations: Vec<Violation>,
    pub info: Vec<String>,
}

impl CensusReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn non_repelling(&self) -> impl Iterator<Item = &PeriodicOrbit> {
        self.orbits.iter().filter(|o| o.class != Stability::Repelling)
    }
}

/// Index of the orbit (among `targets`) that the orbit of `seed` settles on.
fn settle(map: &MapExpr, seed: f64, targets: &[(usize, &PeriodicOrbit)]) -> Result<Option<usize>> {
    if targets.is_empty() {
        return Ok(None);
    }
    let radius = MATCH_RADIUS * map.width();
    let mut x = seed;
    for _ in 0..BURN_IN {
        x = map.eval(x)?;
    }
    let mut streak: Option<(usize, usize)> = None;
    for _ in 0..BASIN_STEPS {
        let hit = targets.iter().find(|(_, o)| {
            o.points.iter().any(|&q| (q - x).abs() <= radius)
        });
        match (hit, streak) {
            (Some((idx, o)), Some((cur, n))) if *idx == cur => {
                if n + 1 >= 2 * o.period {
                    return Ok(Some(*idx));
                }
                streak = Some((cur, n + 1));
            }
            (Some((idx, _)), _) => streak = Some((*idx, 1)),
            (None, _) => streak = None,
        }
        x = map.eval(x)?;
    }
    Ok(None)
}

fn is_boundary(map: &MapExpr, o: &PeriodicOrbit) -> bool {
    let tol = 1e-9 * map.width();
    o.points
        .iter()
        .any(|&q| (q - map.lo).abs() <= tol || (q - map.hi).abs() <= tol)
}

/// Audits the orbit structure against the bound |C(f)| + 2, the basin
/// requirement and the critical-interval endpoint condition.
pub fn singer_census(map: &MapExpr, orbits: &[PeriodicOrbit]) -> Result<CensusReport> {
    let crit = critical_roots(map);
    let bound = crit.len() + 2;
    let mut orbits: Vec<PeriodicOrbit> = orbits.to_vec();
    let targets: Vec<(usize, &PeriodicOrbit)> = orbits
        .iter()
        .enumerate()
        .filter(|(_, o)| o.class != Stability::Repelling)
        .collect();
    let mut seeds: Vec<Seed> = crit.iter().map(|&c| Seed::Critical(c)).collect();
    seeds.push(Seed::Boundary(map.lo));
    seeds.push(Seed::Boundary(map.hi));
    let settled: Vec<Option<usize>> = seeds
        .par_iter()
        .map(|s| {
            let x = match s {
                Seed::Critical(x) | Seed::Boundary(x) => *x,
            };
            settle(map, x, &targets)
        })
        .collect::<Result<_>>()?;
    for (seed, hit) in seeds.iter().zip(&settled) {
        if let Some(i) = hit {
            if orbits[*i].basin_evidence.is_none() {
                orbits[*i].basin_evidence = Some(*seed);
            }
        }
    }

    let mut violations = Vec::new();
    let mut info = Vec::new();
    let mut attracting = 0;
    let mut neutral = 0;
    let mut boundary_neutral = 0;
    for (i, o) in orbits.iter().enumerate() {
        match o.class {
            Stability::Attracting => {
                attracting += 1;
                if o.basin_evidence.is_none() {
                    violations.push(Violation::AttractingWithoutEvidence { orbit: i });
                }
            }
            Stability::Neutral => {
                neutral += 1;
                if is_boundary(map, o) {
                    boundary_neutral += 1;
                    info.push(format!(
                        "neutral orbit {i} touches the boundary of I (not classified further)"
                    ));
                } else if o.basin_evidence.is_none() {
                    violations.push(Violation::InteriorNeutralWithoutEvidence { orbit: i });
                }
            }
            Stability::Repelling => {}
        }
    }
    let count = attracting + neutral;
    if count > bound {
        violations.push(Violation::BoundExceeded { count, bound });
    }

    let ci = critical_interval(map, 1000)?;
    let tol = MATCH_RADIUS * map.width();
    let mut crit_orbit = Vec::new();
    for &c in &crit {
        let mut x = c;
        for _ in 0..LEMMA33_ORBIT {
            crit_orbit.push(x);
            x = map.eval(x)?;
        }
    }
    let mut lemma33 = Vec::new();
    if !crit.is_empty() {
        for e in [ci.a, ci.b] {
            let near = |o: &PeriodicOrbit| o.points.iter().any(|&q| (q - e).abs() <= tol);
            let attracting_low_period = orbits
                .iter()
                .any(|o| o.class != Stability::Repelling && o.period <= 2 && near(o));
            let on_critical_orbit = crit_orbit.iter().any(|&q| (q - e).abs() <= tol);
            let attracts_critical = orbits.iter().any(|o| {
                near(o) && matches!(o.basin_evidence, Some(Seed::Critical(_)))
            });
            let ok = attracting_low_period || on_critical_orbit || attracts_critical;
            if !ok {
                violations.push(Violation::EndpointUnexplained { endpoint: e });
            }
            lemma33.push(EndpointCheck {
                endpoint: e,
                attracting_low_period,
                on_critical_orbit,
                attracts_critical,
                ok,
            });
        }
    } else {
        info.push("map has no critical points; endpoint check skipped".into());
    }

    Ok(CensusReport {
        critical_points: crit,
        bound,
        attracting,
        neutral,
        boundary_neutral,
        orbits,
        critical_interval: ci,
        lemma33,
        violations,
        info,
    })
}

//! Schwarzian derivative of maps and iterates, the convexity criterion and
//! cross ratios.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::MapExpr;
use crate::interval::IntervalBox;
use crate::jet::Jet3;
use crate::orbits::critical_roots;

/// Guard distance relative to |I|.
pub const GUARD_REL: f64 = 1e-7;
/// Second differences must exceed this times the median |g|.
pub const STRICTNESS_REL: f64 = 1e-12;

pub fn guard_distance(map: &MapExpr) -> f64 {
    GUARD_REL * map.width()
}

/// S = f‴/f′ − (3/2)(f″/f′)² from a jet.
pub fn schwarzian_of_jet(j: &Jet3<f64>) -> f64 {
    let r = j.v2 / j.v1;
    j.v3 / j.v1 - 1.5 * r * r
}

/// Interval enclosure of S from an interval jet, or None when f′ may vanish.
pub fn schwarzian_enclosure(j: &Jet3<IntervalBox>) -> Option<IntervalBox> {
    if j.v1.contains_zero() {
        return None;
    }
    let a = j.v3.div(&j.v1).ok()?;
    let r = j.v2.div(&j.v1).ok()?;
    Some(a - IntervalBox::point(1.5) * r.square())
}

fn guarded_jet(map: &MapExpr, x: f64) -> Result<Jet3<f64>> {
    let j = map.eval_jet(x)?;
    if j.v1 == 0.0 || j.v1.abs() <= guard_distance(map) * j.v2.abs() {
        return Err(Error::CriticalProximity(x));
    }
    Ok(j)
}

pub fn schwarzian_at(map: &MapExpr, x: f64) -> Result<f64> {
    Ok(schwarzian_of_jet(&guarded_jet(map, x)?))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SchwarzValue {
    pub x: f64,
    pub k: usize,
    pub value: Option<f64>,
    pub orbit_clear: bool,
}

/// S(f^k)(x) = Σ_{i<k} ((f^i)′(x))² S(f)(f^i(x)).
pub fn schwarzian_iterate(map: &MapExpr, k: usize, x: f64) -> Result<SchwarzValue> {
    assert!(k >= 1);
    let mut y = x;
    let mut d = 1.0f64;
    let mut sum = 0.0f64;
    for _ in 0..k {
        let j = match guarded_jet(map, y) {
            Ok(j) => j,
            Err(Error::CriticalProximity(_)) => {
                return Ok(SchwarzValue {
                    x,
                    k,
                    value: None,
                    orbit_clear: false,
                })
            }
            Err(e) => return Err(e),
        };
        sum += d * d * schwarzian_of_jet(&j);
        d *= j.v1;
        y = j.v0;
    }
    Ok(SchwarzValue {
        x,
        k,
        value: Some(sum),
        orbit_clear: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Witness {
    pub triple: [f64; 3],
    pub second_difference: f64,
    pub interval: usize,
    /// Critical-point freedom re-checked by an interval enclosure of (f^k)′.
    pub confirmed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub k: usize,
    pub verdict: Verdict,
    pub witnesses: Vec<Witness>,
    pub scanned_intervals: Vec<(f64, f64)>,
}

/// Preimages of `targets` under f, found by sign changes of f − t plus
/// tangencies at critical points.
fn preimages(map: &MapExpr, targets: &[f64], crit: &[f64]) -> Vec<f64> {
    let n = 4096usize;
    let h = map.width() / n as f64;
    let xs: Vec<f64> = (0..=n)
        .map(|i| if i == n { map.hi } else { map.lo + h * i as f64 })
        .collect();
    let fx: Vec<f64> = xs.iter().map(|&x| map.eval(x).unwrap_or(f64::NAN)).collect();
    let tol = 1e-9 * map.width();
    let mut out = Vec::new();
    for &t in targets {
        for i in 0..=n {
            let v = fx[i] - t;
            if v == 0.0 {
                out.push(xs[i]);
                continue;
            }
            if i == 0 {
                continue;
            }
            let u = fx[i - 1] - t;
            if u.is_finite() && v.is_finite() && u != 0.0 && (u < 0.0) != (v < 0.0) {
                let (mut a, mut b) = (xs[i - 1], xs[i]);
                for _ in 0..100 {
                    let m = 0.5 * (a + b);
                    if m <= a || m >= b {
                        break;
                    }
                    let w = map.eval(m).unwrap_or(f64::NAN) - t;
                    if (w < 0.0) == (u < 0.0) {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                let r = 0.5 * (a + b);
                if (map.eval(r).unwrap_or(f64::NAN) - t).abs() <= tol {
                    out.push(r);
                }
            }
        }
        for &c in crit {
            if let Ok(v) = map.eval(c) {
                if (v - t).abs() <= tol {
                    out.push(c);
                }
            }
        }
    }
    out
}

/// Critical points of f^k: preimages of C(f) under f^i for i < k, merged
/// with sign changes of (f^k)′ on a grid.
pub fn iterate_critical_points(map: &MapExpr, k: usize) -> Vec<f64> {
    let crit = critical_roots(map);
    let mut all = crit.clone();
    let mut layer = crit.clone();
    for _ in 1..k {
        layer = preimages(map, &layer, &crit);
        all.extend(layer.iter().copied());
    }
    let n = 8192usize;
    let h = map.width() / n as f64;
    let d: Vec<f64> = (0..=n)
        .map(|i| {
            let x = if i == n { map.hi } else { map.lo + h * i as f64 };
            map.iterate_jet(x, k).map(|j| j.v1).unwrap_or(f64::NAN)
        })
        .collect();
    for i in 1..=n {
        let (u, v) = (d[i - 1], d[i]);
        if u.is_finite() && v.is_finite() && u != 0.0 && v != 0.0 && (u < 0.0) != (v < 0.0) {
            let x0 = map.lo + h * (i - 1) as f64;
            let x1 = if i == n { map.hi } else { map.lo + h * i as f64 };
            let (mut a, mut b) = (x0, x1);
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                let w = map.iterate_jet(m, k).map(|j| j.v1).unwrap_or(f64::NAN);
                if w == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if (w < 0.0) == (u < 0.0) {
                    a = m;
                } else {
                    b = m;
                }
            }
            all.push(0.5 * (a + b));
        }
    }
    all.retain(|x| *x > map.lo && *x < map.hi);
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tol = 1e-9 * map.width();
    all.dedup_by(|a, b| (*a - *b).abs() <= tol);
    all
}

/// Interval enclosure of (f^k)′ over `cell` along the interval orbit.
pub fn iterate_derivative_enclosure(map: &MapExpr, k: usize, cell: IntervalBox) -> Result<IntervalBox> {
    let mut x = cell;
    let mut d = IntervalBox::point(1.0);
    for _ in 0..k {
        let dx = map.eval_interval(x, 1)?;
        d = d * dx;
        x = map.eval_interval(x, 0)?;
        let dom = map.domain();
        x = IntervalBox::new(x.lo.max(dom.lo), x.hi.min(dom.hi).max(x.lo.max(dom.lo)));
    }
    Ok(d)
}

fn g_value(map: &MapExpr, k: usize, x: f64) -> Option<f64> {
    let d = map.iterate_jet(x, k).ok()?.v1;
    if d == 0.0 || !d.is_finite() {
        None
    } else {
        Some(d.abs().powf(-0.5))
    }
}

/// Critical-point-free intervals of f^k and the grid samples of
/// g = |(f^k)′|^{−1/2} on each.
pub fn convexity_profile(map: &MapExpr, k: usize, grid_size: usize) -> Vec<((f64, f64), Vec<(f64, f64)>)> {
    let cps = iterate_critical_points(map, k);
    let mut ends = vec![map.lo];
    ends.extend(cps);
    ends.push(map.hi);
    ends.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let h = (b - a) / (grid_size + 1) as f64;
            let pts: Vec<(f64, f64)> = (1..=grid_size)
                .filter_map(|i| {
                    let x = a + h * i as f64;
                    g_value(map, k, x).map(|g| (x, g))
                })
                .collect();
            ((a, b), pts)
        })
        .filter(|(_, pts)| pts.len() >= 3)
        .collect()
}

/// Grid test of strict convexity of |(f^k)′|^{−1/2} on every
/// critical-point-free interval of f^k.
pub fn convexity_scan(map: &MapExpr, k: usize, grid_size: usize) -> ConvexityReport {
    assert!(grid_size >= 16, "grid_size must be at least 16");
    let profile = convexity_profile(map, k, grid_size);
    let scanned: Vec<(f64, f64)> = profile.iter().map(|(iv, _)| *iv).collect();
    let raw: Vec<Witness> = profile
        .par_iter()
        .enumerate()
        .flat_map_iter(|(idx, (_, pts))| {
            let mut gs: Vec<f64> = pts.iter().map(|p| p.1).collect();
            gs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let margin = STRICTNESS_REL * gs[gs.len() / 2];
            let mut ws = Vec::new();
            for w in pts.windows(3) {
                // Points skipped at flat spots break the uniform grid.
                let h0 = w[1].0 - w[0].0;
                let h1 = w[2].0 - w[1].0;
                if (h0 - h1).abs() > 1e-9 * h0.abs().max(h1.abs()) {
                    continue;
                }
                let dd = w[0].1 - 2.0 * w[1].1 + w[2].1;
                if dd <= margin {
                    ws.push(Witness {
                        triple: [w[0].0, w[1].0, w[2].0],
                        second_difference: dd,
                        interval: idx,
                        confirmed: false,
                    });
                }
            }
            ws
        })
        .collect();
    // Confirm a bounded number of witnesses: one is enough for a fail.
    let mut witnesses = Vec::new();
    let mut any_confirmed = false;
    for mut w in raw {
        if !any_confirmed || witnesses.len() < 16 {
            let cell = IntervalBox::new(w.triple[0], w.triple[2]);
            w.confirmed = iterate_derivative_enclosure(map, k, cell)
                .map(|d| !d.contains_zero() && d.is_finite())
                .unwrap_or(false);
            any_confirmed |= w.confirmed;
        }
        if witnesses.len() < 64 {
            witnesses.push(w);
        }
    }
    let verdict = if witnesses.is_empty() {
        Verdict::Pass
    } else if any_confirmed {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    };
    ConvexityReport {
        k,
        verdict,
        witnesses,
        scanned_intervals: scanned,
    }
}

// ---------------------------------------------------------------------------
// Cross ratios

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CrossRatioPair {
    pub u: (f64, f64),
    pub v: (f64, f64),
}

impl CrossRatioPair {
    pub fn new(u: (f64, f64), v: (f64, f64)) -> Result<Self> {
        if !(u.0 < u.1 && v.0 < v.1) {
            return Err(Error::InvalidPair("intervals must be nonempty".into()));
        }
        if !(v.0 < u.0 && u.1 < v.1) {
            return Err(Error::InvalidPair(
                "U must sit strictly inside V (|L|, |R| > 0)".into(),
            ));
        }
        Ok(CrossRatioPair { u, v })
    }

    pub fn left(&self) -> (f64, f64) {
        (self.v.0, self.u.0)
    }

    pub fn right(&self) -> (f64, f64) {
        (self.u.1, self.v.1)
    }
}

pub fn cross_ratio(pair: &CrossRatioPair) -> Result<f64> {
    let len = |i: (f64, f64)| i.1 - i.0;
    let l = len(pair.left());
    let r = len(pair.right());
    if l <= 0.0 || r <= 0.0 {
        return Err(Error::InvalidPair("degenerate component".into()));
    }
    Ok(len(pair.u) * len(pair.v) / (l * r))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CrExpansion {
    pub expanded: bool,
    pub before: f64,
    pub after: f64,
}

/// Relative tolerance below which a cross-ratio change counts as preserved.
pub const CR_REL_TOL: f64 = 1e-12;

pub fn cr_expansion_check(map: &MapExpr, pair: &CrossRatioPair) -> Result<CrExpansion> {
    let vbox = IntervalBox::new(pair.v.0, pair.v.1);
    let d = map.eval_interval(vbox, 1)?;
    if d.contains_zero() {
        return Err(Error::InvalidPair(
            "f may not be injective on V (critical point possible)".into(),
        ));
    }
    let f = |x: f64| map.eval(x);
    let sort = |a: f64, b: f64| if a <= b { (a, b) } else { (b, a) };
    let image = CrossRatioPair {
        u: sort(f(pair.u.0)?, f(pair.u.1)?),
        v: sort(f(pair.v.0)?, f(pair.v.1)?),
    };
    let before = cross_ratio(pair)?;
    let after = cross_ratio(&image)?;
    Ok(CrExpansion {
        expanded: after > before * (1.0 + CR_REL_TOL),
        before,
        after,
    })
}

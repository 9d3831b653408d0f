//! Synthetic return-map families of a bursting neuron model: landmark
//! parameters, Misiurewicz parameters, rescaling conjugation and the
//! hypothesis report for the acip/mixing theorem.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{partition_certificate, Outcome, Partition, Rigor};
use crate::error::{Error, Result};
use crate::expr::{Expr, MapExpr};
use crate::measure::{dn_sequence, growth_fit, summability_check, Growth, SumMode, SumVerdict};
use crate::orbits::critical_order;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    /// (x + δ)·√(1 − x/d)
    Sqrt,
    /// e + (1 − η)·x(1 + δx)·√(1 − x/d)
    Lingering,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReturnMapFamily {
    pub kind: FamilyKind,
    pub d: f64,
    /// Level of the constant right branch before clipping.
    pub w: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Offset e and slope defect η of the lingering family.
    pub e: f64,
    pub eta: f64,
}

pub const LINGERING_E: f64 = 0.02;
pub const LINGERING_ETA: f64 = 0.03;
pub const LINGERING_W: f64 = 0.05;

/// F_δ(x) = (x + δ)·√(1 − x/d) on [0, d), constant w on [d, 1].
pub fn synth_family(d: f64, w: f64) -> Result<ReturnMapFamily> {
    if !(0.0 < w && w < d && d < 1.0) {
        return Err(Error::Precondition(format!("need 0 < w < d < 1, got w = {w}, d = {d}")));
    }
    Ok(ReturnMapFamily {
        kind: FamilyKind::Sqrt,
        d,
        w,
        delta_min: 0.05,
        delta_max: (1.25 * d).min(2.0 * d - 0.05),
        e: 0.0,
        eta: 0.0,
    })
}

/// F_δ(x) = e + (1 − η)·x(1 + δx)·√(1 − x/d) on [0, d), constant on [d, 1],
/// δ ∈ [1, 3].
pub fn lingering_family(d: f64) -> Result<ReturnMapFamily> {
    if !(0.5 < d && d < 1.0) {
        return Err(Error::Precondition(format!("need 0.5 < d < 1, got d = {d}")));
    }
    Ok(ReturnMapFamily {
        kind: FamilyKind::Lingering,
        d,
        w: LINGERING_W,
        delta_min: 1.0,
        delta_max: 3.0,
        e: LINGERING_E,
        eta: LINGERING_ETA,
    })
}

impl ReturnMapFamily {
    fn check_delta(&self, delta: f64) -> Result<()> {
        if delta >= self.delta_min && delta <= self.delta_max {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "δ = {delta} outside [{}, {}]",
                self.delta_min, self.delta_max
            )))
        }
    }

    pub fn branch1_source(&self) -> &'static str {
        match self.kind {
            FamilyKind::Sqrt => "(x+delta)*sqrt(1-x/d)",
            FamilyKind::Lingering => "e+(1-eta)*x*(1+delta*x)*sqrt(1-x/d)",
        }
    }

    /// Left branch value; valid for 0 ≤ x < d.
    pub fn branch1(&self, delta: f64, x: f64) -> f64 {
        let s = (1.0 - x / self.d).sqrt();
        match self.kind {
            FamilyKind::Sqrt => (x + delta) * s,
            FamilyKind::Lingering => self.e + (1.0 - self.eta) * x * (1.0 + delta * x) * s,
        }
    }

    pub fn branch1_slope(&self, delta: f64, x: f64) -> f64 {
        let s = (1.0 - x / self.d).sqrt();
        let d = self.d;
        match self.kind {
            FamilyKind::Sqrt => s - (x + delta) / (2.0 * d * s),
            FamilyKind::Lingering => {
                (1.0 - self.eta) * ((1.0 + 2.0 * delta * x) * s - x * (1.0 + delta * x) / (2.0 * d * s))
            }
        }
    }

    pub fn critical_point(&self, delta: f64) -> f64 {
        let d = self.d;
        match self.kind {
            FamilyKind::Sqrt => (2.0 * d - delta) / 3.0,
            FamilyKind::Lingering => {
                let a = 4.0 * d * delta - 3.0;
                (a + (a * a + 40.0 * d * delta).sqrt()) / (10.0 * delta)
            }
        }
    }

    pub fn critical_value(&self, delta: f64) -> f64 {
        self.branch1(delta, self.critical_point(delta))
    }

    /// Constant right branch, clipped below the critical value.
    pub fn branch2(&self, delta: f64) -> f64 {
        let fc = self.critical_value(delta);
        if self.w < fc {
            self.w
        } else {
            0.5 * fc
        }
    }

    pub fn eval(&self, delta: f64, x: f64) -> f64 {
        if x < self.d {
            self.branch1(delta, x)
        } else {
            self.branch2(delta)
        }
    }

    pub fn slope(&self, delta: f64, x: f64) -> f64 {
        if x < self.d {
            self.branch1_slope(delta, x)
        } else {
            0.0
        }
    }

    pub fn params(&self, delta: f64) -> BTreeMap<String, f64> {
        let mut p = BTreeMap::new();
        p.insert("delta".to_string(), delta);
        p.insert("d".to_string(), self.d);
        p.insert("w".to_string(), self.branch2(delta));
        if self.kind == FamilyKind::Lingering {
            p.insert("e".to_string(), self.e);
            p.insert("eta".to_string(), self.eta);
        }
        p
    }

    /// F_δ as a two-piece map on [0, 1].
    pub fn map(&self, delta: f64) -> Result<MapExpr> {
        self.check_delta(delta)?;
        MapExpr::from_pieces(
            (0.0, 1.0),
            &self.params(delta),
            &[(0.0, self.d, self.branch1_source()), (self.d, 1.0, "w")],
        )
    }

    /// Left branch alone, as a map on [0, d).
    fn branch1_map(&self, delta: f64) -> Result<MapExpr> {
        MapExpr::from_pieces((0.0, self.d), &self.params(delta), &[(0.0, self.d, self.branch1_source())])
    }

    /// c, F(c), F²(c), … (m + 1 points).
    pub fn critical_orbit(&self, delta: f64, m: usize) -> Vec<f64> {
        let mut x = self.critical_point(delta);
        let mut out = Vec::with_capacity(m + 1);
        out.push(x);
        for _ in 0..m {
            x = self.eval(delta, x);
            out.push(x);
        }
        out
    }

    /// Fixed point α(δ) in (0, d) by bisection on F(x) − x.
    pub fn fixed_point(&self, delta: f64) -> Result<f64> {
        let g = |x: f64| self.branch1(delta, x) - x;
        let mut lo = 0.0;
        let mut hi = self.d * (1.0 - 1e-15);
        if !(g(lo) > 0.0 && g(hi) < 0.0) {
            return Err(Error::NoSignChange(format!("F(x) − x on (0, d) at δ = {delta}")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Diffeo,
    Unimodal,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilyFeatures {
    pub delta: f64,
    pub c: f64,
    pub alpha: f64,
    pub critical_value: f64,
    pub c2: f64,
    pub critical_interval: (f64, f64),
    pub regime: Regime,
}

pub fn family_features(family: &ReturnMapFamily, delta: f64) -> Result<FamilyFeatures> {
    family.check_delta(delta)?;
    let c = family.critical_point(delta);
    let alpha = family.fixed_point(delta)?;
    let c1 = family.eval(delta, c);
    let c2 = family.eval(delta, c1);
    let (regime, lo) = if c <= c2 { (Regime::Diffeo, c) } else { (Regime::Unimodal, c2) };
    Ok(FamilyFeatures {
        delta,
        c,
        alpha,
        critical_value: c1,
        c2,
        critical_interval: (lo, c1),
        regime,
    })
}

/// One row per δ on a uniform grid of `steps` intervals.
pub fn sweep(family: &ReturnMapFamily, steps: usize) -> Result<Vec<FamilyFeatures>> {
    let steps = steps.max(1);
    (0..=steps)
        .into_par_iter()
        .map(|i| {
            let t = i as f64 / steps as f64;
            let delta = family.delta_min + (family.delta_max - family.delta_min) * t;
            family_features(family, delta.min(family.delta_max))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Landmarks

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Landmark {
    pub value: f64,
    pub bracket: (f64, f64),
    pub residual: f64,
    /// Further sign changes found by the scan.
    pub other_roots: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Landmarks {
    pub delta0: Landmark,
    pub delta_n: Landmark,
    pub delta_b: Landmark,
}

pub const LANDMARK_SCAN: usize = 1000;

fn bisect(g: &dyn Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut glo = g(lo)?;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid)?;
        if gm == 0.0 {
            return Ok(mid);
        }
        if (gm > 0.0) == (glo > 0.0) {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (g(lo)?.abs(), g(hi)?.abs());
    Ok(if a <= b { lo } else { hi })
}

/// Sign changes of g over a uniform scan of [a, b], each refined by
/// bisection to `tol`.
fn scan_roots(g: &(dyn Fn(f64) -> Result<f64> + Sync), a: f64, b: f64, tol: f64, name: &str) -> Result<Landmark> {
    let xs: Vec<f64> = (0..=LANDMARK_SCAN)
        .map(|i| a + (b - a) * i as f64 / LANDMARK_SCAN as f64)
        .collect();
    let vals: Vec<f64> = xs.par_iter().map(|&x| g(x)).collect::<Result<_>>()?;
    let mut roots = Vec::new();
    for i in 0..LANDMARK_SCAN {
        if (vals[i] > 0.0) != (vals[i + 1] > 0.0) {
            let r = bisect(g, xs[i], xs[i + 1], tol)?;
            roots.push((r, (xs[i], xs[i + 1])));
        }
    }
    let Some(&(value, bracket)) = roots.first() else {
        return Err(Error::NoSignChange(name.to_string()));
    };
    Ok(Landmark {
        value,
        bracket,
        residual: g(value)?.abs(),
        other_roots: roots[1..].iter().map(|r| r.0).collect(),
    })
}

pub const LANDMARK_TOL: f64 = 1e-15;

pub fn find_landmarks(family: &ReturnMapFamily) -> Result<Landmarks> {
    find_landmarks_tol(family, LANDMARK_TOL)
}

pub fn find_landmarks_tol(family: &ReturnMapFamily, tol: f64) -> Result<Landmarks> {
    let (a, b) = (family.delta_min, family.delta_max);
    let g0 = |dl: f64| Ok(family.fixed_point(dl)? - family.critical_point(dl));
    let gb = |dl: f64| Ok(family.critical_value(dl) - family.d);
    let gn = |dl: f64| Ok(family.branch1_slope(dl, family.fixed_point(dl)?) + 1.0);
    Ok(Landmarks {
        delta0: scan_roots(&g0, a, b, tol, "α(δ) − c(δ)")?,
        delta_n: scan_roots(&gn, a, b, tol, "F′(α(δ)) + 1")?,
        delta_b: scan_roots(&gb, a, b, tol, "F(c(δ)) − d")?,
    })
}

// ---------------------------------------------------------------------------
// Misiurewicz parameters

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Misiurewicz {
    pub delta: f64,
    pub m: usize,
    pub bracket: (f64, f64),
    /// |c^m(δ*) − α(δ*)|
    pub residual: f64,
    pub multiplier: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MisiurewiczRefusal {
    pub reason: String,
    pub bracket: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum MisiurewiczOutcome {
    Found(Misiurewicz),
    Refused(MisiurewiczRefusal),
}

fn orbit_crosses(family: &ReturnMapFamily, delta: f64, m: usize) -> bool {
    family.critical_orbit(delta, m)[..m].iter().any(|&x| x >= family.d)
}

/// Condition (i): c(δ₁) ≤ c^m(δ₁).
fn condition_i(family: &ReturnMapFamily, delta: f64, m: usize) -> std::result::Result<(), String> {
    let o = family.critical_orbit(delta, m);
    if o[0] <= o[m] {
        Ok(())
    } else {
        Err(format!("condition (i) c(δ₁) ≤ c^{m}(δ₁) fails: {} > {}", o[0], o[m]))
    }
}

/// Condition (ii): c^m(δ₂) ≤ c(δ₂), c³(δ₂) < α(δ₂), c^{m+1}(δ₂) < α(δ₂).
fn condition_ii(family: &ReturnMapFamily, delta: f64, m: usize) -> std::result::Result<(), String> {
    let o = family.critical_orbit(delta, m + 1);
    let alpha = family.fixed_point(delta).map_err(|e| e.to_string())?;
    if o[m] > o[0] {
        return Err(format!("condition (ii) c^{m}(δ₂) ≤ c(δ₂) fails: {} > {}", o[m], o[0]));
    }
    if o[3] >= alpha {
        return Err(format!("condition (ii) c³(δ₂) < α(δ₂) fails: {} ≥ {alpha}", o[3]));
    }
    if o[m + 1] >= alpha {
        return Err(format!("condition (ii) c^{}(δ₂) < α(δ₂) fails: {} ≥ {alpha}", m + 1, o[m + 1]));
    }
    Ok(())
}

/// Scans (δ₀, δ_b) for the last δ₁ with condition (i) and c^m > α, followed
/// by the first δ₂ satisfying condition (ii).
pub fn scan_bracket(family: &ReturnMapFamily, m: usize, landmarks: &Landmarks) -> Option<(f64, f64)> {
    let (a, b) = (landmarks.delta0.value, landmarks.delta_b.value);
    let n = LANDMARK_SCAN;
    let pts: Vec<f64> = (1..n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
    let g = |dl: f64| family.fixed_point(dl).map(|al| family.critical_orbit(dl, m)[m] - al);
    let first_ii = pts.iter().position(|&dl| condition_ii(family, dl, m).is_ok())?;
    let d1 = pts[..first_ii]
        .iter()
        .rev()
        .find(|&&dl| condition_i(family, dl, m).is_ok() && g(dl).map(|v| v > 0.0).unwrap_or(false))?;
    Some((*d1, pts[first_ii]))
}

pub fn find_misiurewicz(family: &ReturnMapFamily, m: usize, bracket: Option<(f64, f64)>) -> Result<MisiurewiczOutcome> {
    if m < 3 {
        return Err(Error::Precondition(format!("m must be at least 3, got {m}")));
    }
    let refuse = |reason: String, bracket| Ok(MisiurewiczOutcome::Refused(MisiurewiczRefusal { reason, bracket }));
    let landmarks = find_landmarks(family)?;
    let (d1, d2) = match bracket {
        Some(b) => b,
        None => match scan_bracket(family, m, &landmarks) {
            Some(b) => b,
            None => return refuse(format!("no bracket in (δ₀, δ_b) satisfies conditions (i) and (ii) for m = {m}"), None),
        },
    };
    let (lo, hi) = (landmarks.delta0.value, landmarks.delta_b.value);
    if !(lo < d1 && d1 < d2 && d2 < hi) {
        return refuse(format!("bracket [{d1}, {d2}] must lie inside (δ₀, δ_b) = ({lo}, {hi})"), Some((d1, d2)));
    }
    if let Err(r) = condition_i(family, d1, m) {
        return refuse(r, Some((d1, d2)));
    }
    if let Err(r) = condition_ii(family, d2, m) {
        return refuse(r, Some((d1, d2)));
    }
    let g = |dl: f64| -> Result<f64> { Ok(family.critical_orbit(dl, m)[m] - family.fixed_point(dl)?) };
    let (g1, g2) = (g(d1)?, g(d2)?);
    if (g1 > 0.0) == (g2 > 0.0) {
        return refuse(format!("c^{m}(δ) − α(δ) has the same sign at both bracket endpoints"), Some((d1, d2)));
    }
    let mut a = d1;
    let mut b = d2;
    let mut ga = g1;
    while b - a > LANDMARK_TOL * b.abs().max(1.0) {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if orbit_crosses(family, mid, m) {
            return refuse(format!("critical orbit crosses the discontinuity at δ = {mid}"), Some((d1, d2)));
        }
        let gm = g(mid)?;
        if gm == 0.0 {
            a = mid;
            b = mid;
            break;
        }
        if (gm > 0.0) == (ga > 0.0) {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
    }
    let delta = if g(a)?.abs() <= g(b)?.abs() { a } else { b };
    let alpha = family.fixed_point(delta)?;
    Ok(MisiurewiczOutcome::Found(Misiurewicz {
        delta,
        m,
        bracket: (d1, d2),
        residual: g(delta)?.abs(),
        multiplier: family.branch1_slope(delta, alpha),
    }))
}

// ---------------------------------------------------------------------------
// Rescaling and the theorem report

#[derive(Clone, Debug)]
pub struct Rescaled {
    pub map: MapExpr,
    pub a: f64,
    pub b: f64,
}

impl Rescaled {
    pub fn h(&self, x: f64) -> f64 {
        (self.b - self.a) * x + self.a
    }
}

/// H = h⁻¹ ∘ F̃ ∘ h on [0, 1] with h(x) = (b − a)x + a over the critical
/// interval [a, b].
pub fn rescale_conjugate(family: &ReturnMapFamily, delta: f64) -> Result<Rescaled> {
    let feats = family_features(family, delta)?;
    let (a, b) = feats.critical_interval;
    if !(b > a) || b >= family.d {
        return Err(Error::Degenerate(format!("critical interval [{a}, {b}] is not inside [0, d)")));
    }
    let base = family.branch1_map(delta)?;
    let inner = Expr::Add(
        Box::new(Expr::Mul(Box::new(Expr::Const(b - a)), Box::new(Expr::X))),
        Box::new(Expr::Const(a)),
    );
    let composed = base.pieces[0].expr.substitute(&inner);
    let expr = Expr::Div(
        Box::new(Expr::Sub(Box::new(composed), Box::new(Expr::Const(a)))),
        Box::new(Expr::Const(b - a)),
    );
    let map = MapExpr::from_exprs((0.0, 1.0), vec![(0.0, 1.0, expr)])?;
    Ok(Rescaled { map, a, b })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Hypothesis {
    Met { detail: String },
    Unmet { detail: String },
    Unknown { detail: String },
}

impl Hypothesis {
    pub fn is_met(&self) -> bool {
        matches!(self, Hypothesis::Met { .. })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Theorem6Report {
    pub delta: f64,
    pub m: usize,
    pub alpha: f64,
    pub multiplier: f64,
    pub orbit_contains_alpha: Hypothesis,
    /// Conditions (i)-(ii) are checked by the search; (iii) and (iv) here.
    pub condition_iii: Hypothesis,
    pub condition_iv: Hypothesis,
    pub dn_terms: usize,
    pub growth: Growth,
    pub expected_beta: f64,
    pub beta_rel_err: Option<f64>,
    pub summability_thm2: SumVerdict,
    pub summability_thm3: SumVerdict,
    pub conclusion_a: Hypothesis,
    pub conclusion_b: Hypothesis,
}

pub const ORBIT_HIT_TOL: f64 = 1e-8;
pub const DN_TRACK_TOL: f64 = 1e-5;

pub fn check_theorem6(family: &ReturnMapFamily, delta: f64, m: usize, k_max: usize) -> Result<Theorem6Report> {
    let feats = family_features(family, delta)?;
    let alpha = feats.alpha;
    let multiplier = family.branch1_slope(delta, alpha);
    let orbit = family.critical_orbit(delta, m);
    let hit = (orbit[m] - alpha).abs();
    let orbit_contains_alpha = if hit < ORBIT_HIT_TOL {
        Hypothesis::Met { detail: format!("|c^{m} − α| = {hit:.3e}") }
    } else {
        Hypothesis::Unmet { detail: format!("|c^{m} − α| = {hit:.3e}") }
    };

    let landmarks = find_landmarks(family)?;
    let dn_ = landmarks.delta_n.value;
    let condition_iv = if delta > dn_ {
        Hypothesis::Met { detail: format!("δ = {delta} > δ_n = {dn_}") }
    } else {
        Hypothesis::Unmet { detail: format!("δ = {delta} ≤ δ_n = {dn_}") }
    };

    // D_n while the orbit still shadows α, at least 20 terms.
    let map = family.map(delta)?;
    let mut terms = 20usize;
    {
        let mut x = orbit[m];
        let mut n = m;
        while (x - alpha).abs() < DN_TRACK_TOL && n < 400 {
            x = family.eval(delta, x);
            n += 1;
        }
        terms = terms.max(n.saturating_sub(1));
    }
    let dn = dn_sequence(&map, feats.c, terms)?;
    let growth = growth_fit(&dn.log_d)?.growth;
    let expected_beta = multiplier.abs().ln();
    let beta_rel_err = match growth {
        Growth::Exponential { beta } => Some((beta - expected_beta).abs() / expected_beta.abs()),
        _ => None,
    };
    let ell = critical_order(&map, feats.c).map(|f| f.order).unwrap_or(2.0);
    let summability_thm2 = summability_check(&dn, ell, SumMode::Thm2)?.verdict;
    let summability_thm3 = summability_check(&dn, ell, SumMode::Thm3)?.verdict;

    let condition_iii = if k_max == 0 {
        Hypothesis::Unknown { detail: "no certificate attempted (k_max = 0)".into() }
    } else {
        let h = rescale_conjugate(family, delta)?;
        let part = Partition::uniform(0.0, 1.0, 16);
        match partition_certificate(&h.map, &part, k_max, Rigor::Interval)? {
            Outcome::Certified(c) => Hypothesis::Met {
                detail: format!("partition certificate of order {} on the rescaled map", c.order_bound),
            },
            Outcome::Refused(r) => Hypothesis::Unknown {
                detail: format!("no certificate up to k = {k_max}: {}", r.reason),
            },
        }
    };

    let all = [&orbit_contains_alpha, &condition_iii, &condition_iv];
    let conclusion_a = if all.iter().all(|h| h.is_met()) {
        Hypothesis::Met { detail: "hypotheses for an acip hold".into() }
    } else if all.iter().any(|h| matches!(h, Hypothesis::Unmet { .. })) {
        Hypothesis::Unmet { detail: "a hypothesis fails".into() }
    } else {
        Hypothesis::Unknown { detail: "some hypothesis is undecided".into() }
    };
    // The left branch is analytic on the critical interval, so F̃ is C³.
    let conclusion_b = match &conclusion_a {
        Hypothesis::Met { .. } => Hypothesis::Met {
            detail: "C³ on the critical interval; mixing of an iterate expected".into(),
        },
        other => other.clone(),
    };

    Ok(Theorem6Report {
        delta,
        m,
        alpha,
        multiplier,
        orbit_contains_alpha,
        condition_iii,
        condition_iv,
        dn_terms: terms,
        growth,
        expected_beta,
        beta_rel_err,
        summability_thm2,
        summability_thm3,
        conclusion_a,
        conclusion_b,
    })
}

// ---------------------------------------------------------------------------
// Property audit

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PropertyAudit {
    pub delta: f64,
    pub single_discontinuity: bool,
    pub critical_order_two: bool,
    pub slope_pattern: bool,
    pub steep_at_d: bool,
    pub branch2_in_range: bool,
    pub unique_fixed_point: bool,
}

impl PropertyAudit {
    pub fn passed(&self) -> bool {
        self.single_discontinuity
            && self.critical_order_two
            && self.slope_pattern
            && self.steep_at_d
            && self.branch2_in_range
            && self.unique_fixed_point
    }
}

pub fn audit_properties(family: &ReturnMapFamily, delta: f64) -> Result<PropertyAudit> {
    let map = family.map(delta)?;
    let d = family.d;
    let c = family.critical_point(delta);
    let jump = (family.branch1(delta, d * (1.0 - 1e-12)) - family.branch2(delta)).abs();
    let single_discontinuity = map.pieces.len() == 2 && jump > 1e-6;
    let critical_order_two = critical_order(&map, c)
        .map(|f| (f.order - 2.0).abs() < 1e-3)
        .unwrap_or(false);
    let n = 2000;
    let slope_pattern = (1..n).all(|i| {
        let x = d * i as f64 / n as f64;
        let s = family.branch1_slope(delta, x);
        if x < c * (1.0 - 1e-9) {
            s > 0.0
        } else if x > c * (1.0 + 1e-9) {
            s < 0.0
        } else {
            true
        }
    });
    let steep_at_d = family.branch1_slope(delta, d - 1e-7) < -1e3;
    let b2 = family.branch2(delta);
    let branch2_in_range = b2 > 0.0 && b2 < family.critical_value(delta);
    let g = |x: f64| family.branch1(delta, x) - x;
    let changes = (0..n)
        .filter(|&i| {
            let a = d * i as f64 / n as f64;
            let b = d * (i + 1) as f64 / n as f64 * (1.0 - 1e-15);
            (g(a) > 0.0) != (g(b) > 0.0)
        })
        .count();
    Ok(PropertyAudit {
        delta,
        single_discontinuity,
        critical_order_two,
        slope_pattern,
        steep_at_d,
        branch2_in_range,
        unique_fixed_point: changes == 1,
    })
}

//! Growth of D_n along critical orbits, summability tests, Ulam
//! approximation of the acip and correlation decay.

use petgraph::algo::condensation;
use petgraph::graph::DiGraph;
use petgraph::Direction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::MapExpr;
use crate::orbits::critical_interval;

// ---------------------------------------------------------------------------
// D_n

/// ln D_n(c) for n = 1..N, D_n(c) = Π_{i=1}^n |f′(f^i c)|.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DnSequence {
    pub c: f64,
    pub log_d: Vec<f64>,
    /// First n whose factor vanished (orbit hit a critical point).
    pub hit_critical: Option<usize>,
}

impl DnSequence {
    pub fn len(&self) -> usize {
        self.log_d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_d.is_empty()
    }

    /// D_n for 1-based n.
    pub fn value(&self, n: usize) -> f64 {
        self.log_d[n - 1].exp()
    }
}

/// D_1..D_n, truncated before the first n whose orbit point f^n(c) is
/// critical (D is zero from there on).
pub fn dn_sequence(map: &MapExpr, c: f64, n: usize) -> Result<DnSequence> {
    let crit = crate::orbits::critical_roots(map);
    let tol = 1e-9 * map.width();
    let mut x = c;
    let mut acc = 0.0f64;
    let mut log_d = Vec::with_capacity(n);
    let mut hit = None;
    for i in 1..=n {
        x = map.eval(x)?;
        let d = map.eval_jet(x)?.v1.abs();
        if d == 0.0 || crit.iter().any(|r| (x - r).abs() <= tol) {
            hit = Some(i);
            break;
        }
        acc += d.ln();
        log_d.push(acc);
    }
    Ok(DnSequence { c, log_d, hit_critical: hit })
}

/// D_{n,k}(c̃) = Π_{i=1}^n |(f^k)′(f^{ik} c̃)|, in log form.
pub fn dn_iterate_sequence(map: &MapExpr, c_tilde: f64, k: usize, n: usize) -> Result<Vec<f64>> {
    let mut x = c_tilde;
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        x = map.iterate(x, k)?;
        acc += map.iterate_jet(x, k)?.v1.abs().ln();
        out.push(acc);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DnIdentityRow {
    pub n: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
}

/// Checks D_{(n+1)k−m−1}(c) = C_{k,m} · D_{n,k}(c̃) where c = f^m(c̃) and
/// C_{k,m} = Π_{i=1}^{k−m−1} |f′(f^i c)|.
pub fn dn_identity_check(map: &MapExpr, c_tilde: f64, k: usize, m: usize, n_max: usize) -> Result<Vec<DnIdentityRow>> {
    if m >= k {
        return Err(Error::Precondition(format!("need m < k, got m = {m}, k = {k}")));
    }
    let c = map.iterate(c_tilde, m)?;
    let total = (n_max + 1) * k - m - 1;
    let d = dn_sequence(map, c, total)?;
    let log_c = if k - m - 1 == 0 { 0.0 } else { d.log_d[k - m - 2] };
    let dk = dn_iterate_sequence(map, c_tilde, k, n_max)?;
    Ok((1..=n_max)
        .map(|n| {
            let lhs = d.log_d[(n + 1) * k - m - 2].exp();
            let rhs = (log_c + dk[n - 1]).exp();
            DnIdentityRow {
                n,
                lhs,
                rhs,
                rel_err: (lhs - rhs).abs() / lhs.abs().max(f64::MIN_POSITIVE),
            }
        })
        .collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DnIdentityReport {
    pub k: usize,
    pub c_tilde: f64,
    /// Steps from c̃ to the critical point of f, when unique.
    pub m: Option<usize>,
    pub hypothesis_ok: bool,
    pub reason: Option<String>,
    pub rows: Vec<DnIdentityRow>,
    pub max_rel_err: f64,
}

/// Locates the unique m < k with f^m(c̃) ∈ C(f) and checks the identity;
/// reports a hypothesis failure when the first k orbit points meet C(f)
/// more than once.
pub fn iterate_dn_identity_check(map: &MapExpr, k: usize, c_tilde: f64, n_max: usize) -> Result<DnIdentityReport> {
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    let crit = crate::orbits::critical_roots(map);
    let tol = 1e-9 * map.width();
    let mut hits = Vec::new();
    let mut x = c_tilde;
    for i in 0..k {
        if crit.iter().any(|c| (x - c).abs() <= tol) {
            hits.push(i);
        }
        x = map.eval(x)?;
    }
    let fail = |reason: String, m| DnIdentityReport {
        k,
        c_tilde,
        m,
        hypothesis_ok: false,
        reason: Some(reason),
        rows: Vec::new(),
        max_rel_err: f64::NAN,
    };
    match hits.as_slice() {
        [] => Err(Error::NotCritical(c_tilde)),
        [m] => {
            let rows = dn_identity_check(map, c_tilde, k, *m, n_max)?;
            let max_rel_err = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
            Ok(DnIdentityReport {
                k,
                c_tilde,
                m: Some(*m),
                hypothesis_ok: true,
                reason: None,
                rows,
                max_rel_err,
            })
        }
        many => Ok(fail(
            format!("orbit of c̃ meets C(f) at steps {many:?}; m is not unique"),
            None,
        )),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Growth {
    /// D_n ≈ C e^{βn}
    Exponential { beta: f64 },
    /// D_n ≈ C n^γ
    Polynomial { gamma: f64 },
    Subpolynomial,
    Undetermined,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthFit {
    pub growth: Growth,
    pub exp_residual: f64,
    pub poly_residual: f64,
    pub used_from: usize,
}

fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let icpt = my - slope * mx;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - icpt - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, icpt, rms)
}

/// Classifies the growth of D_n from its logarithms (1-based n).
pub fn growth_fit(log_d: &[f64]) -> Result<GrowthFit> {
    const MIN_TERMS: usize = 8;
    if log_d.len() < MIN_TERMS {
        return Err(Error::TooFewTerms { needed: MIN_TERMS, got: log_d.len() });
    }
    let from = log_d.len() / 4;
    let ns: Vec<f64> = (from + 1..=log_d.len()).map(|n| n as f64).collect();
    let ys = &log_d[from..];
    if ys.iter().any(|y| !y.is_finite()) {
        return Ok(GrowthFit {
            growth: Growth::Undetermined,
            exp_residual: f64::NAN,
            poly_residual: f64::NAN,
            used_from: from + 1,
        });
    }
    let lns: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let (beta, _, r_exp) = line_fit(&ns, ys);
    let (gamma, _, r_poly) = line_fit(&lns, ys);
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let std = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
    let spread = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let growth = if spread < 1.0 {
        Growth::Subpolynomial
    } else if r_exp.min(r_poly) > 0.25 * std {
        Growth::Undetermined
    } else if r_exp <= r_poly {
        Growth::Exponential { beta }
    } else {
        Growth::Polynomial { gamma }
    };
    Ok(GrowthFit { growth, exp_residual: r_exp, poly_residual: r_poly, used_from: from + 1 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SumMode {
    /// Σ D_n^{−1/(2ℓ−1)}
    Thm2,
    /// Σ D_n^{−1/ℓ_max}
    Thm3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SumVerdict {
    Convergent,
    Divergent,
    Undetermined,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summability {
    pub mode: SumMode,
    pub exponent: f64,
    pub partial_sums: Vec<f64>,
    pub growth: Growth,
    pub verdict: SumVerdict,
    /// Partial sum plus a geometric tail estimate when the growth is
    /// exponential.
    pub limit_estimate: Option<f64>,
}

pub fn summability_exponent(ell: f64, mode: SumMode) -> f64 {
    match mode {
        SumMode::Thm2 => -1.0 / (2.0 * ell - 1.0),
        SumMode::Thm3 => -1.0 / ell,
    }
}

pub fn summability_check(dn: &DnSequence, ell: f64, mode: SumMode) -> Result<Summability> {
    if !(ell >= 1.0) {
        return Err(Error::Precondition(format!("critical order must be at least 1, got {ell}")));
    }
    let exponent = summability_exponent(ell, mode);
    let mut acc = 0.0;
    let partial_sums: Vec<f64> = dn
        .log_d
        .iter()
        .map(|l| {
            acc += (exponent * l).exp();
            acc
        })
        .collect();
    let fit = growth_fit(&dn.log_d)?;
    let (verdict, limit) = match fit.growth {
        Growth::Exponential { beta } if beta > 0.0 => {
            let q = (exponent * beta).exp();
            let last = (exponent * dn.log_d.last().unwrap()).exp();
            (SumVerdict::Convergent, Some(acc + last * q / (1.0 - q)))
        }
        Growth::Exponential { .. } => (SumVerdict::Divergent, None),
        Growth::Polynomial { gamma } if -exponent * gamma > 1.0 => (SumVerdict::Convergent, None),
        Growth::Polynomial { .. } | Growth::Subpolynomial => (SumVerdict::Divergent, None),
        Growth::Undetermined => (SumVerdict::Undetermined, None),
    };
    Ok(Summability {
        mode,
        exponent,
        partial_sums,
        growth: fit.growth,
        verdict,
        limit_estimate: limit,
    })
}

// ---------------------------------------------------------------------------
// Ulam

pub const ULAM_SAMPLES: usize = 64;
pub const ULAM_LEVELS: usize = 20;

/// Uniform bins whose two end bins are split geometrically toward the
/// domain endpoints.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UlamGrid {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    pub levels: usize,
    pub edges: Vec<f64>,
}

impl UlamGrid {
    pub fn new(lo: f64, hi: f64, bins: usize, levels: usize) -> Result<UlamGrid> {
        if bins < 2 || !(lo < hi) {
            return Err(Error::Precondition("need at least two bins on a proper interval".into()));
        }
        let h = (hi - lo) / bins as f64;
        let mut edges = vec![lo];
        for k in (1..=levels).rev() {
            edges.push(lo + h * 0.5f64.powi(k as i32));
        }
        for i in 1..bins {
            edges.push(lo + h * i as f64);
        }
        for k in 1..=levels {
            edges.push(hi - h * 0.5f64.powi(k as i32));
        }
        edges.push(hi);
        Ok(UlamGrid { lo, hi, bins, levels, edges })
    }

    /// Grid over the critical interval when it is known and proper,
    /// otherwise over the whole domain.
    pub fn for_map(map: &MapExpr, bins: usize) -> Result<UlamGrid> {
        let (lo, hi) = density_support(map);
        UlamGrid::new(lo, hi, bins, ULAM_LEVELS)
    }

    pub fn states(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn state_width(&self, s: usize) -> f64 {
        self.edges[s + 1] - self.edges[s]
    }

    pub fn locate(&self, y: f64) -> usize {
        let i = self.edges.partition_point(|&e| e <= y);
        i.saturating_sub(1).min(self.states() - 1)
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    /// Uniform bin containing state `s`.
    pub fn bin_of_state(&self, s: usize) -> usize {
        let mid = 0.5 * (self.edges[s] + self.edges[s + 1]);
        (((mid - self.lo) / self.bin_width()) as usize).min(self.bins - 1)
    }

    fn samples(&self, s: usize) -> impl Iterator<Item = f64> + '_ {
        let a = self.edges[s];
        let w = self.state_width(s);
        (0..ULAM_SAMPLES).map(move |j| a + w * (j as f64 + 0.5) / ULAM_SAMPLES as f64)
    }
}

/// Support used for densities: orbits outside the critical interval are
/// transient.
pub fn density_support(map: &MapExpr) -> (f64, f64) {
    match critical_interval(map, 1000) {
        Ok(ci) if ci.converged && !ci.degenerate && ci.b - ci.a > 1e-9 * map.width() => (ci.a, ci.b),
        _ => (map.lo, map.hi),
    }
}

/// Row-stochastic sparse transfer matrix.
#[derive(Clone, Debug)]
pub struct UlamOperator {
    pub grid: UlamGrid,
    pub rows: Vec<Vec<(u32, f64)>>,
}

impl UlamOperator {
    pub fn build(map: &MapExpr, grid: UlamGrid) -> Result<UlamOperator> {
        let rows = (0..grid.states())
            .into_par_iter()
            .map(|s| {
                let mut targets: Vec<u32> = Vec::with_capacity(ULAM_SAMPLES);
                for x in grid.samples(s) {
                    let y = map.eval(x)?.clamp(grid.lo, grid.hi);
                    targets.push(grid.locate(y) as u32);
                }
                targets.sort_unstable();
                let mut row: Vec<(u32, f64)> = Vec::new();
                for t in targets {
                    match row.last_mut() {
                        Some((j, w)) if *j == t => *w += 1.0,
                        _ => row.push((t, 1.0)),
                    }
                }
                for e in &mut row {
                    e.1 /= ULAM_SAMPLES as f64;
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(UlamOperator { grid, rows })
    }

    /// v ↦ v P
    pub fn push_forward(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (i, row) in self.rows.iter().enumerate() {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for &(j, w) in row {
                out[j as usize] += vi * w;
            }
        }
        out
    }

    /// φ ↦ P φ
    pub fn pull_back(&self, phi: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * phi[j as usize]).sum())
            .collect()
    }

    /// Number of closed communicating classes of the state graph.
    pub fn closed_classes(&self) -> usize {
        let mut g = DiGraph::<(), ()>::with_capacity(self.rows.len(), 0);
        let nodes: Vec<_> = (0..self.rows.len()).map(|_| g.add_node(())).collect();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, _) in row {
                g.add_edge(nodes[i], nodes[j as usize], ());
            }
        }
        let cond = condensation(g, true);
        cond.node_indices()
            .filter(|&n| cond.neighbors_directed(n, Direction::Outgoing).all(|m| m == n))
            .count()
    }

    /// State averages of φ over the sample points.
    pub fn state_average(&self, phi: &(dyn Fn(f64) -> f64 + Sync)) -> Vec<f64> {
        (0..self.grid.states())
            .map(|s| self.grid.samples(s).map(phi).sum::<f64>() / ULAM_SAMPLES as f64)
            .collect()
    }

    pub fn lebesgue(&self) -> Vec<f64> {
        let total = self.grid.hi - self.grid.lo;
        (0..self.grid.states()).map(|s| self.grid.state_width(s) / total).collect()
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UlamDensity {
    pub lo: f64,
    pub hi: f64,
    /// Density on `bins` uniform bins.
    pub density: Vec<f64>,
    /// Mass per refined state.
    pub mass: Vec<f64>,
    /// ‖vP − v‖₁ for the operator of f.
    pub residual: f64,
    pub iterations: usize,
    pub iterate: usize,
}

impl UlamDensity {
    pub fn bins(&self) -> usize {
        self.density.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn bin_masses(&self) -> Vec<f64> {
        let h = self.bin_width();
        self.density.iter().map(|d| d * h).collect()
    }

    pub fn l1_distance(&self, other: &UlamDensity) -> Result<f64> {
        if self.bins() != other.bins() || self.lo != other.lo || self.hi != other.hi {
            return Err(Error::GridMismatch("bin grids differ".into()));
        }
        Ok(l1(&self.bin_masses(), &other.bin_masses()))
    }

    /// L¹ distance to a reference measure given by its distribution function.
    pub fn l1_to_cdf(&self, cdf: impl Fn(f64) -> f64) -> f64 {
        let h = self.bin_width();
        self.bin_masses()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let a = self.lo + h * i as f64;
                (m - (cdf(a + h) - cdf(a))).abs()
            })
            .sum()
    }
}

fn aggregate(op: &UlamOperator, mass: &[f64]) -> Vec<f64> {
    let g = &op.grid;
    let mut d = vec![0.0; g.bins];
    for (s, m) in mass.iter().enumerate() {
        d[g.bin_of_state(s)] += m;
    }
    let h = g.bin_width();
    d.iter_mut().for_each(|x| *x /= h);
    d
}

#[derive(Clone, Copy, Debug)]
pub struct PowerOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Residual above which the result is reported as non-convergent.
    pub accept: f64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions { tol: 1e-13, max_iter: 50_000, accept: 1e-6 }
    }
}

/// Stationary vector of P^k by lazy power iteration from Lebesgue.
fn stationary(op: &UlamOperator, k: usize, opts: &PowerOptions) -> Result<(Vec<f64>, usize)> {
    if op.closed_classes() > 1 {
        return Err(Error::Degenerate("Ulam chain has several closed classes; the invariant density is not unique".into()));
    }
    let step = |v: &[f64]| {
        let mut w = v.to_vec();
        for _ in 0..k {
            w = op.push_forward(&w);
        }
        w
    };
    let mut v = op.lebesgue();
    let mut last = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let w = step(&v);
        let next: Vec<f64> = v.iter().zip(&w).map(|(a, b)| 0.5 * (a + b)).collect();
        let change = l1(&next, &v);
        v = next;
        last = change;
        if change < opts.tol {
            let total: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= total);
            return Ok((v, it));
        }
    }
    let residual = l1(&step(&v), &v);
    if residual > opts.accept {
        return Err(Error::NonConvergent { residual, steps: opts.max_iter });
    }
    let _ = last;
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    Ok((v, opts.max_iter))
}

pub fn ulam_density(map: &MapExpr, bins: usize) -> Result<UlamDensity> {
    ulam_density_iterate(map, 1, bins)
}

/// Ulam density of f^k, realised as the stationary vector of P_f^k on the
/// refined grid.
pub fn ulam_density_iterate(map: &MapExpr, k: usize, bins: usize) -> Result<UlamDensity> {
    let op = UlamOperator::build(map, UlamGrid::for_map(map, bins)?)?;
    ulam_density_with(&op, k, &PowerOptions::default())
}

pub fn ulam_density_with(op: &UlamOperator, k: usize, opts: &PowerOptions) -> Result<UlamDensity> {
    if k == 0 {
        return Err(Error::Precondition("iterate k must be at least 1".into()));
    }
    let (mass, iterations) = stationary(op, k, opts)?;
    let residual = l1(&op.push_forward(&mass), &mass);
    Ok(UlamDensity {
        lo: op.grid.lo,
        hi: op.grid.hi,
        density: aggregate(op, &mass),
        residual,
        mass,
        iterations,
        iterate: k,
    })
}

/// ‖P^k v − v‖₁
pub fn iterate_residual(op: &UlamOperator, mass: &[f64], k: usize) -> f64 {
    let mut pushed = mass.to_vec();
    for _ in 0..k {
        pushed = op.push_forward(&pushed);
    }
    l1(&pushed, mass)
}

/// Largest f^k residual accepted by [`average_measure`].
pub const AVERAGE_INPUT_TOL: f64 = 1e-3;

/// υ = (1/k) Σ_{i<k} f^i_* ν for an f^k-invariant ν on the same grid.
pub fn average_measure(map: &MapExpr, input: &UlamDensity, k: usize) -> Result<UlamDensity> {
    let grid = UlamGrid::new(input.lo, input.hi, input.bins(), ULAM_LEVELS)?;
    let op = UlamOperator::build(map, grid)?;
    average_measure_with(&op, input, k)
}

pub fn average_measure_with(op: &UlamOperator, input: &UlamDensity, k: usize) -> Result<UlamDensity> {
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    if input.mass.len() != op.grid.states() {
        return Err(Error::GridMismatch("input mass does not match the operator grid".into()));
    }
    let residual_k = iterate_residual(op, &input.mass, k);
    if residual_k > AVERAGE_INPUT_TOL {
        return Err(Error::Precondition(format!(
            "input is not invariant under f^{k}: residual {residual_k:.3e}"
        )));
    }
    let mut acc = vec![0.0; input.mass.len()];
    let mut v = input.mass.clone();
    for i in 0..k {
        if i > 0 {
            v = op.push_forward(&v);
        }
        acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b / k as f64);
    }
    let residual = l1(&op.push_forward(&acc), &acc);
    Ok(UlamDensity {
        lo: op.grid.lo,
        hi: op.grid.hi,
        density: aggregate(op, &acc),
        residual,
        mass: acc,
        iterations: 0,
        iterate: 1,
    })
}

// ---------------------------------------------------------------------------
// Orbits and correlations

fn random_start(map: &MapExpr, rng: &mut ChaCha8Rng) -> f64 {
    map.lo + map.width() * rng.gen_range(0.05..0.95)
}

/// Runs an orbit of `steps` points after `burn_in`, restarting from a fresh
/// random point whenever rounding traps it on a fixed point.
fn orbit_stream(map: &MapExpr, rng: &mut ChaCha8Rng, burn_in: usize, steps: usize, mut visit: impl FnMut(usize, f64)) -> Result<()> {
    let mut x = random_start(map, rng);
    for _ in 0..burn_in {
        x = map.eval(x)?;
    }
    for t in 0..steps {
        let y = map.eval(x)?;
        visit(t, x);
        x = if y == x { random_start(map, rng) } else { y };
    }
    Ok(())
}

/// Normalized orbit histogram on `bins` uniform bins.
pub fn orbit_histogram(map: &MapExpr, steps: usize, bins: usize, seed: u64) -> Result<UlamDensity> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = density_support(map);
    let h = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    orbit_stream(map, &mut rng, 1000, steps, |_, x| {
        let i = (((x - lo) / h).max(0.0) as usize).min(bins - 1);
        counts[i] += 1;
    })?;
    let density = counts.iter().map(|&c| c as f64 / steps as f64 / h).collect();
    Ok(UlamDensity {
        lo,
        hi,
        density,
        mass: Vec::new(),
        residual: f64::NAN,
        iterations: steps,
        iterate: 1,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct CorrelationOptions {
    pub bins: usize,
    pub streams: usize,
    pub steps_per_stream: usize,
    pub seed: u64,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        CorrelationOptions { bins: 4096, streams: 16, steps_per_stream: 625_000, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub n: usize,
    pub operator: f64,
    pub birkhoff: f64,
    pub sigma_birkhoff: f64,
    pub sigma_discretization: f64,
    pub coherent: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rows: Vec<CorrelationRow>,
    /// Fitted rate r in |C_n| ≈ A e^{−rn} over the operator estimates.
    pub decay_rate: Option<f64>,
}

/// C_n = Σ v_i ψ_i (P^n φ)_i − (Σ v φ)(Σ v ψ)
fn operator_correlations(
    op: &UlamOperator,
    phi: &(dyn Fn(f64) -> f64 + Sync),
    psi: &(dyn Fn(f64) -> f64 + Sync),
    n_max: usize,
) -> Result<Vec<f64>> {
    let v = ulam_density_with(op, 1, &PowerOptions::default())?.mass;
    let ph = op.state_average(phi);
    let ps = op.state_average(psi);
    let mean_phi: f64 = v.iter().zip(&ph).map(|(a, b)| a * b).sum();
    let mean_psi: f64 = v.iter().zip(&ps).map(|(a, b)| a * b).sum();
    let mut cur = ph;
    let mut out = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        if n > 0 {
            cur = op.pull_back(&cur);
        }
        let s: f64 = v.iter().zip(&ps).zip(&cur).map(|((a, b), c)| a * b * c).sum();
        out.push(s - mean_phi * mean_psi);
    }
    Ok(out)
}

fn birkhoff_correlations(
    map: &MapExpr,
    phi: &(dyn Fn(f64) -> f64 + Sync),
    psi: &(dyn Fn(f64) -> f64 + Sync),
    n_max: usize,
    opts: &CorrelationOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let per_stream: Vec<Vec<f64>> = (0..opts.streams)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(s as u64);
            let len = opts.steps_per_stream + n_max;
            let mut xs = Vec::with_capacity(len);
            orbit_stream(map, &mut rng, 1000, len, |_, x| xs.push(x))?;
            let f: Vec<f64> = xs.iter().map(|&x| phi(x)).collect();
            let g: Vec<f64> = xs.iter().map(|&x| psi(x)).collect();
            let m = opts.steps_per_stream;
            let mf = f[..m].iter().sum::<f64>() / m as f64;
            let mg = g[..m].iter().sum::<f64>() / m as f64;
            Ok((0..=n_max)
                .map(|n| (0..m).map(|t| f[t + n] * g[t]).sum::<f64>() / m as f64 - mf * mg)
                .collect())
        })
        .collect::<Result<_>>()?;
    let s = per_stream.len() as f64;
    let mut mean = vec![0.0; n_max + 1];
    let mut sigma = vec![0.0; n_max + 1];
    for n in 0..=n_max {
        let vals: Vec<f64> = per_stream.iter().map(|r| r[n]).collect();
        let mu = vals.iter().sum::<f64>() / s;
        let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (s - 1.0).max(1.0);
        mean[n] = mu;
        sigma[n] = (var / s).sqrt();
    }
    Ok((mean, sigma))
}

/// Operator-power and Birkhoff estimates of C_n(φ, ψ) for n = 0..=n_max,
/// cross-validated within three combined standard errors.
pub fn correlation_decay(
    map: &MapExpr,
    phi: &(dyn Fn(f64) -> f64 + Sync),
    psi: &(dyn Fn(f64) -> f64 + Sync),
    n_max: usize,
    opts: &CorrelationOptions,
) -> Result<CorrelationReport> {
    if opts.streams < 2 {
        return Err(Error::Precondition("need at least two Birkhoff streams".into()));
    }
    if opts.bins < 8 {
        return Err(Error::Precondition("need at least 8 bins".into()));
    }
    let levels: Vec<Vec<f64>> = [opts.bins, opts.bins / 2, opts.bins / 4]
        .par_iter()
        .map(|&b| {
            let op = UlamOperator::build(map, UlamGrid::for_map(map, b)?)?;
            operator_correlations(&op, phi, psi, n_max)
        })
        .collect::<Result<_>>()?;
    let op = &levels[0];
    let (birk, sigma) = birkhoff_correlations(map, phi, psi, n_max, opts)?;
    let rows: Vec<CorrelationRow> = (0..=n_max)
        .map(|n| {
            // Successive-halving differences; their sum bounds the remaining
            // bias for any convergence order down to h^{1/2}.
            let su = (op[n] - levels[1][n]).abs() + (levels[1][n] - levels[2][n]).abs();
            let bar = 3.0 * (sigma[n].powi(2) + su.powi(2)).sqrt();
            CorrelationRow {
                n,
                operator: op[n],
                birkhoff: birk[n],
                sigma_birkhoff: sigma[n],
                sigma_discretization: su,
                coherent: (op[n] - birk[n]).abs() <= bar,
            }
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .skip(1)
        .filter(|r| r.operator.abs() > 10.0 * r.sigma_discretization && r.operator != 0.0)
        .map(|r| (r.n as f64, r.operator.abs().ln()))
        .collect();
    let decay_rate = (pts.len() >= 3).then(|| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        -line_fit(&xs, &ys).0
    });
    Ok(CorrelationReport { rows, decay_rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn logistic_dn_is_power_of_four() {
        let d = dn_sequence(&fixtures::logistic(), 0.5, 20).unwrap();
        for n in 1..=20 {
            let want = 4f64.powi(n as i32);
            assert!((d.value(n) - want).abs() <= 1e-9 * want);
        }
    }

    #[test]
    fn grid_edges_are_increasing() {
        let g = UlamGrid::new(0.0, 1.0, 16, 5).unwrap();
        assert!(g.edges.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(g.states(), 16 - 2 + 2 * 6);
        assert_eq!(g.locate(0.0), 0);
        assert_eq!(g.locate(1.0), g.states() - 1);
    }

    #[test]
    fn identity_is_degenerate() {
        let m = MapExpr::parse("x", (0.0, 1.0), &Default::default()).unwrap();
        assert!(matches!(ulam_density(&m, 32), Err(Error::Degenerate(_))));
    }

    #[test]
    fn too_few_terms() {
        assert!(matches!(growth_fit(&[1.0, 2.0]), Err(Error::TooFewTerms { .. })));
    }
}

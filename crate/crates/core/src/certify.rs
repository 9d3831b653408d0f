//! Certificates of an eventual negative Schwarzian derivative: the partition
//! form (admissible sequences over a transition graph) and the Möbius form
//! (Möbius pieces plus an escape bound).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, MapExpr};
use crate::interval::IntervalBox;
use crate::orbits::critical_roots;
use crate::schwarzian::{convexity_scan, schwarzian_enclosure, schwarzian_of_jet, Verdict, Witness};

/// Excision radius around critical points, relative to the cell width.
pub const EXCISION_REL: f64 = 1e-4;
pub const SAMPLED_DERIV_FACTOR: f64 = 1.05;
pub const SAMPLED_T_FRACTION: f64 = 0.05;
pub const DEFAULT_CELL_BUDGET: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub endpoints: Vec<f64>,
}

impl Partition {
    pub fn new(endpoints: Vec<f64>) -> Result<Partition> {
        if endpoints.len() < 3 {
            return Err(Error::BadPartition("a partition needs at least two cells".into()));
        }
        if endpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::BadPartition("endpoints must be strictly increasing".into()));
        }
        Ok(Partition { endpoints })
    }

    pub fn for_map(map: &MapExpr, endpoints: Vec<f64>) -> Result<Partition> {
        let p = Partition::new(endpoints)?;
        if p.endpoints[0] != map.lo || *p.endpoints.last().unwrap() != map.hi {
            return Err(Error::BadPartition(format!(
                "partition must span [{}, {}]",
                map.lo, map.hi
            )));
        }
        Ok(p)
    }

    pub fn uniform(lo: f64, hi: f64, n: usize) -> Partition {
        let n = n.max(2);
        let h = (hi - lo) / n as f64;
        let mut e: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
        e.push(hi);
        Partition { endpoints: e }
    }

    pub fn len(&self) -> usize {
        self.endpoints.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, i: usize) -> IntervalBox {
        IntervalBox::new(self.endpoints[i], self.endpoints[i + 1])
    }

    pub fn cells(&self) -> Vec<IntervalBox> {
        (0..self.len()).map(|i| self.cell(i)).collect()
    }

    pub fn bisect(&mut self, i: usize) {
        let m = self.cell(i).mid();
        self.endpoints.insert(i + 1, m);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub a: Vec<Vec<bool>>,
}

impl TransitionMatrix {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.a[i].iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j)
    }

    pub fn as_u8(&self) -> Vec<Vec<u8>> {
        self.a
            .iter()
            .map(|r| r.iter().map(|&b| b as u8).collect())
            .collect()
    }
}

/// a[i][j] = true iff an enclosure of f(I_i) meets the closed cell I_j.
pub fn build_transition_matrix(map: &MapExpr, partition: &Partition) -> Result<TransitionMatrix> {
    build_transition_matrix_depth(map, partition, crate::expr::DEFAULT_DEPTH)
}

fn build_transition_matrix_depth(map: &MapExpr, partition: &Partition, depth: u32) -> Result<TransitionMatrix> {
    let cells = partition.cells();
    let images: Vec<IntervalBox> = cells
        .par_iter()
        .map(|c| map.eval_interval_depth(*c, 0, depth))
        .collect::<Result<_>>()?;
    let a = images
        .iter()
        .map(|img| cells.iter().map(|c| img.intersects(c)).collect())
        .collect();
    Ok(TransitionMatrix { a })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rigor {
    Interval,
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellBound {
    #[serde(rename = "T")]
    pub t: f64,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellBounds {
    pub cells: Vec<CellBound>,
    pub rigor: Rigor,
    pub excision_radius: f64,
}

/// Tuning of the branch-and-bound enclosure of sup S on a cell.
#[derive(Clone, Copy, Debug)]
pub struct BoundSettings {
    pub initial_split: usize,
    pub budget: usize,
    pub rel_tol: f64,
    pub min_width_rel: f64,
}

impl Default for BoundSettings {
    fn default() -> Self {
        BoundSettings {
            initial_split: 32,
            budget: 20_000,
            rel_tol: 1e-4,
            min_width_rel: 1e-12,
        }
    }
}

impl BoundSettings {
    /// Independent, finer settings used when replaying a certificate.
    pub fn replay() -> Self {
        BoundSettings {
            initial_split: 96,
            budget: 40_000,
            rel_tol: 2e-5,
            min_width_rel: 1e-12,
        }
    }
}

#[derive(PartialEq)]
struct Node {
    upper: f64,
    piece: usize,
    cell: IntervalBox,
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.upper
            .partial_cmp(&other.upper)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.cell.lo.partial_cmp(&self.cell.lo).unwrap_or(Ordering::Equal))
    }
}

/// Sound upper bound for sup S over `region` (no critical points inside).
fn sup_schwarzian(map: &MapExpr, region: IntervalBox, s: &BoundSettings) -> Result<f64> {
    let min_w = s.min_width_rel * map.width().max(region.width());
    let upper_of = |piece: usize, c: IntervalBox| -> Result<Option<f64>> {
        let j = map.jet_enclosure(piece, c)?;
        Ok(schwarzian_enclosure(&j).map(|e| e.hi))
    };
    let point_value = |piece: usize, x: f64| -> f64 {
        map.eval_jet_piece(piece, x)
            .map(|j| if j.v1 != 0.0 { schwarzian_of_jet(&j) } else { f64::NEG_INFINITY })
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut heap = BinaryHeap::new();
    let mut lower = f64::NEG_INFINITY;
    let mut evals = 0usize;
    let push = |heap: &mut BinaryHeap<Node>, lower: &mut f64, piece: usize, c: IntervalBox| -> Result<()> {
        *lower = lower.max(point_value(piece, c.mid()));
        let up = match upper_of(piece, c) {
            Ok(Some(u)) if !u.is_nan() => u,
            Ok(_) => f64::INFINITY,
            Err(Error::Eval { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        heap.push(Node { upper: up, piece, cell: c });
        Ok(())
    };
    for (piece, sub) in map.piece_cells(&region) {
        for c in sub.split(s.initial_split) {
            push(&mut heap, &mut lower, piece, c)?;
            evals += 1;
        }
    }
    while let Some(top) = heap.pop() {
        let tol = s.rel_tol * (1.0 + lower.abs());
        if top.upper <= lower + tol || evals >= s.budget || top.cell.width() <= min_w {
            return Ok(top.upper.max(lower));
        }
        let m = top.cell.mid();
        for c in [IntervalBox::new(top.cell.lo, m), IntervalBox::new(m, top.cell.hi)] {
            push(&mut heap, &mut lower, top.piece, c)?;
            evals += 1;
        }
    }
    Ok(lower)
}

fn excised_regions(cell: IntervalBox, crit: &[f64], radius: f64) -> Vec<IntervalBox> {
    let mut regions = vec![cell];
    for &c in crit {
        if c < cell.lo - radius || c > cell.hi + radius {
            continue;
        }
        let mut next = Vec::new();
        for r in regions {
            let a = c - radius;
            let b = c + radius;
            if b <= r.lo || a >= r.hi {
                next.push(r);
                continue;
            }
            if a > r.lo {
                next.push(IntervalBox::new(r.lo, a));
            }
            if b < r.hi {
                next.push(IntervalBox::new(b, r.hi));
            }
        }
        regions = next;
    }
    regions
}

fn cell_bound_interval(
    map: &MapExpr,
    cell: IntervalBox,
    crit: &[f64],
    settings: &BoundSettings,
    depth: u32,
) -> Result<CellBound> {
    let radius = EXCISION_REL * cell.width();
    let inside: Vec<f64> = crit
        .iter()
        .copied()
        .filter(|&c| c >= cell.lo && c <= cell.hi)
        .collect();
    let mut t = f64::NEG_INFINITY;
    for r in excised_regions(cell, &inside, radius) {
        t = t.max(sup_schwarzian(map, r, settings)?);
    }
    let (m, big_m) = match map.eval_interval_depth(cell, 1, depth) {
        Ok(d) => {
            let m = if inside.is_empty() { d.square().lo } else { 0.0 };
            (m, d.square().hi)
        }
        Err(Error::Eval { .. }) => (0.0, f64::INFINITY),
        Err(e) => return Err(e),
    };
    Ok(CellBound { t, m, big_m })
}

fn cell_bound_sampled(map: &MapExpr, cell: IntervalBox, crit: &[f64]) -> Result<CellBound> {
    let radius = EXCISION_REL * cell.width();
    let inside: Vec<f64> = crit
        .iter()
        .copied()
        .filter(|&c| c >= cell.lo && c <= cell.hi)
        .collect();
    let n = 4096;
    let mut smax = f64::NEG_INFINITY;
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for i in 0..=n {
        let x = cell.lo + cell.width() * i as f64 / n as f64;
        let j = map.eval_jet(x.min(cell.hi))?;
        let d2 = j.v1 * j.v1;
        dmin = dmin.min(d2);
        dmax = dmax.max(d2);
        if inside.iter().all(|c| (x - c).abs() >= radius) && j.v1 != 0.0 {
            smax = smax.max(schwarzian_of_jet(&j));
        }
    }
    let m = if inside.is_empty() { dmin / SAMPLED_DERIV_FACTOR } else { 0.0 };
    Ok(CellBound {
        t: smax + SAMPLED_T_FRACTION * smax.abs(),
        m,
        big_m: dmax * SAMPLED_DERIV_FACTOR,
    })
}

pub fn compute_cell_bounds(map: &MapExpr, partition: &Partition, rigor: Rigor) -> Result<CellBounds> {
    compute_cell_bounds_with(map, partition, rigor, &BoundSettings::default())
}

pub fn compute_cell_bounds_with(
    map: &MapExpr,
    partition: &Partition,
    rigor: Rigor,
    settings: &BoundSettings,
) -> Result<CellBounds> {
    let crit = critical_roots(map);
    let cells: Vec<CellBound> = partition
        .cells()
        .par_iter()
        .map(|&c| match rigor {
            Rigor::Interval => cell_bound_interval(map, c, &crit, settings, crate::expr::DEFAULT_DEPTH),
            Rigor::Sampled => cell_bound_sampled(map, c, &crit),
        })
        .collect::<Result<_>>()?;
    Ok(CellBounds {
        cells,
        rigor,
        excision_radius: EXCISION_REL,
    })
}

// ---------------------------------------------------------------------------
// Admissible sequences

/// R_j for a cell with Schwarzian bound `t` given the running products.
pub fn term(t: f64, pmin: f64, pmax: f64) -> f64 {
    if t <= 0.0 {
        if t == 0.0 || pmin == 0.0 {
            0.0
        } else {
            pmin * t
        }
    } else if pmax == 0.0 {
        0.0
    } else {
        pmax * t
    }
}

/// Terms R_0..R_{k−1} of one sequence.
pub fn sequence_terms(bounds: &[CellBound], seq: &[usize]) -> Vec<f64> {
    let mut pmin = 1.0;
    let mut pmax = 1.0;
    seq.iter()
        .map(|&c| {
            let b = bounds[c];
            let r = term(b.t, pmin, pmax);
            pmin *= b.m;
            pmax *= b.big_m;
            r
        })
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct SearchResult {
    pub worst_sum: f64,
    pub worst_sequence: Vec<usize>,
    pub visited: u64,
}

struct Dfs<'a, F: FnMut(&[usize], f64)> {
    matrix: &'a TransitionMatrix,
    bounds: &'a [CellBound],
    k: usize,
    prune: bool,
    tpos: f64,
    mmax: f64,
    best: f64,
    best_seq: Vec<usize>,
    seq: Vec<usize>,
    visited: u64,
    visitor: F,
}

impl<F: FnMut(&[usize], f64)> Dfs<'_, F> {
    fn bound(&self, sum: f64, pmax: f64, remaining: usize) -> f64 {
        if self.tpos <= 0.0 || remaining == 0 || pmax == 0.0 {
            return sum;
        }
        let mut geo = 0.0;
        let mut p = 1.0;
        for _ in 0..remaining {
            geo += p;
            p *= self.mmax;
        }
        let ub = sum + self.tpos * pmax * geo;
        ub + 1e-9 * (ub.abs() + sum.abs())
    }

    fn go(&mut self, sum: f64, pmin: f64, pmax: f64) {
        let depth = self.seq.len();
        if depth == self.k {
            self.visited += 1;
            (self.visitor)(&self.seq, sum);
            if sum > self.best {
                self.best = sum;
                self.best_seq = self.seq.clone();
            }
            return;
        }
        if self.prune && depth > 0 {
            let ub = self.bound(sum, pmax, self.k - depth);
            if ub < 0.0 && ub < self.best {
                return;
            }
        }
        let last = *self.seq.last().unwrap();
        let next: Vec<usize> = self.matrix.successors(last).collect();
        for j in next {
            let b = self.bounds[j];
            let r = term(b.t, pmin, pmax);
            self.seq.push(j);
            self.go(sum + r, pmin * b.m, pmax * b.big_m);
            self.seq.pop();
        }
    }
}

fn search_from(
    matrix: &TransitionMatrix,
    bounds: &[CellBound],
    k: usize,
    prune: bool,
    start: usize,
    visitor: impl FnMut(&[usize], f64),
) -> SearchResult {
    let tpos = bounds.iter().map(|b| b.t).fold(0.0f64, f64::max);
    let mmax = bounds.iter().map(|b| b.big_m).fold(0.0f64, f64::max);
    let b0 = bounds[start];
    let mut dfs = Dfs {
        matrix,
        bounds,
        k,
        prune,
        tpos,
        mmax,
        best: f64::NEG_INFINITY,
        best_seq: Vec::new(),
        seq: vec![start],
        visited: 0,
        visitor,
    };
    dfs.go(b0.t, b0.m, b0.big_m);
    SearchResult {
        worst_sum: dfs.best,
        worst_sequence: dfs.best_seq,
        visited: dfs.visited,
    }
}

/// Maximal Σ R_j over admissible sequences of length k, lexicographic
/// tie-break. Deterministic regardless of scheduling.
pub fn worst_sequence(matrix: &TransitionMatrix, bounds: &[CellBound], k: usize, prune: bool) -> SearchResult {
    assert!(k >= 1);
    let parts: Vec<SearchResult> = (0..matrix.n())
        .into_par_iter()
        .map(|s| search_from(matrix, bounds, k, prune, s, |_, _| {}))
        .collect();
    let mut out = SearchResult {
        worst_sum: f64::NEG_INFINITY,
        ..Default::default()
    };
    for p in parts {
        out.visited += p.visited;
        if p.worst_sum > out.worst_sum {
            out.worst_sum = p.worst_sum;
            out.worst_sequence = p.worst_sequence;
        }
    }
    out
}

/// Every sequence reached by the depth-first search, in visiting order.
pub fn enumerate_sequences(matrix: &TransitionMatrix, bounds: &[CellBound], k: usize, prune: bool) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    for s in 0..matrix.n() {
        search_from(matrix, bounds, k, prune, s, |seq, sum| out.push((seq.to_vec(), sum)));
    }
    out
}

// ---------------------------------------------------------------------------
// Certificates

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertKind {
    Mobius,
    Partition,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: CertKind,
    pub order_bound: usize,
    pub rigor: Rigor,
    pub partition: Vec<f64>,
    pub matrix: Vec<Vec<u8>>,
    pub bounds: Vec<CellBound>,
    pub worst_sequence: Vec<usize>,
    pub worst_sum: f64,
    /// Radius of the excised critical neighbourhoods, relative to cell width.
    pub excision_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobius_pieces: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escape_bound: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_partition: Option<Vec<f64>>,
    /// Confirmed convexity failure of f^{k−1}: evidence that the order is
    /// exactly `order_bound`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_lower_evidence: Option<Witness>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Refusal {
    pub kind: CertKind,
    pub k_max: usize,
    pub reason: String,
    pub blocking_sequence: Vec<usize>,
    pub sum: f64,
    pub partition: Vec<f64>,
    pub bounds: Vec<CellBound>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum Outcome {
    Certified(Certificate),
    Refused(Refusal),
}

impl Outcome {
    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            Outcome::Certified(c) => Some(c),
            Outcome::Refused(_) => None,
        }
    }

    pub fn refusal(&self) -> Option<&Refusal> {
        match self {
            Outcome::Refused(r) => Some(r),
            Outcome::Certified(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CertifyOptions {
    pub refine: bool,
    pub cell_budget: usize,
    pub prune: bool,
    pub order_evidence: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            refine: true,
            cell_budget: DEFAULT_CELL_BUDGET,
            prune: true,
            order_evidence: true,
        }
    }
}

pub fn partition_certificate(map: &MapExpr, partition: &Partition, k_max: usize, rigor: Rigor) -> Result<Outcome> {
    partition_certificate_with(map, partition, k_max, rigor, &CertifyOptions::default())
}

pub fn partition_certificate_with(
    map: &MapExpr,
    partition: &Partition,
    k_max: usize,
    rigor: Rigor,
    opts: &CertifyOptions,
) -> Result<Outcome> {
    assert!(k_max >= 1, "k_max must be at least 1");
    let crit = critical_roots(map);
    let settings = BoundSettings::default();
    let mut part = partition.clone();
    let mut cache: HashMap<(u64, u64), CellBound> = HashMap::new();
    loop {
        let matrix = build_transition_matrix(map, &part)?;
        let cells = part.cells();
        let missing: Vec<IntervalBox> = cells
            .iter()
            .filter(|c| !cache.contains_key(&(c.lo.to_bits(), c.hi.to_bits())))
            .copied()
            .collect();
        let fresh: Vec<CellBound> = missing
            .par_iter()
            .map(|&c| match rigor {
                Rigor::Interval => cell_bound_interval(map, c, &crit, &settings, crate::expr::DEFAULT_DEPTH),
                Rigor::Sampled => cell_bound_sampled(map, c, &crit),
            })
            .collect::<Result<_>>()?;
        for (c, b) in missing.iter().zip(fresh) {
            cache.insert((c.lo.to_bits(), c.hi.to_bits()), b);
        }
        let bounds: Vec<CellBound> = cells
            .iter()
            .map(|c| cache[&(c.lo.to_bits(), c.hi.to_bits())])
            .collect();

        let mut last = SearchResult::default();
        for k in 1..=k_max {
            let res = worst_sequence(&matrix, &bounds, k, opts.prune);
            if res.worst_sum < 0.0 {
                let evidence = if opts.order_evidence && k > 1 {
                    let scan = convexity_scan(map, k - 1, 256);
                    if scan.verdict == Verdict::Fail {
                        scan.witnesses.into_iter().find(|w| w.confirmed)
                    } else {
                        None
                    }
                } else {
                    None
                };
                return Ok(Outcome::Certified(Certificate {
                    kind: CertKind::Partition,
                    order_bound: k,
                    rigor,
                    partition: part.endpoints.clone(),
                    matrix: matrix.as_u8(),
                    bounds,
                    worst_sequence: res.worst_sequence,
                    worst_sum: res.worst_sum,
                    excision_radius: EXCISION_REL,
                    mobius_pieces: None,
                    escape_bound: None,
                    initial_partition: (part != *partition).then(|| partition.endpoints.clone()),
                    order_lower_evidence: evidence,
                }));
            }
            last = res;
        }
        let terms = sequence_terms(&bounds, &last.worst_sequence);
        let culprit = terms
            .iter()
            .enumerate()
            .filter(|(_, r)| **r > 0.0)
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(Ordering::Equal).then(b.0.cmp(&a.0)))
            .map(|(j, _)| last.worst_sequence[j]);
        match culprit {
            // At k = 1 the sum is a single near-tight T, so bisection cannot help.
            Some(cell) if opts.refine && k_max > 1 && part.len() < opts.cell_budget => part.bisect(cell),
            _ => {
                let blocking_t = last.worst_sequence.iter().map(|&c| bounds[c].t).fold(f64::NEG_INFINITY, f64::max);
                let reason = if k_max == 1 {
                    format!(
                        "cell {} has Schwarzian bound T = {:.6e} >= 0",
                        last.worst_sequence[0], blocking_t
                    )
                } else {
                    format!(
                        "admissible sequence of length {k_max} has nonnegative sum bound {:.6e}",
                        last.worst_sum
                    )
                };
                return Ok(Outcome::Refused(Refusal {
                    kind: CertKind::Partition,
                    k_max,
                    reason,
                    blocking_sequence: last.worst_sequence,
                    sum: last.worst_sum,
                    partition: part.endpoints.clone(),
                    bounds,
                }));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Möbius pieces

/// (a, b, c, d) with the expression equal to (a x + b)/(c x + d).
type Frac = (f64, f64, f64, f64);

fn const_value(e: &Expr) -> Option<f64> {
    if e.contains_x() {
        None
    } else {
        e.eval(0.0f64).ok()
    }
}

fn linear_fraction(e: &Expr) -> Option<Frac> {
    if let Some(k) = const_value(e) {
        return Some((0.0, k, 0.0, 1.0));
    }
    let affine = |f: Frac| f.2 == 0.0;
    match e {
        Expr::X => Some((1.0, 0.0, 0.0, 1.0)),
        Expr::Const(k) => Some((0.0, *k, 0.0, 1.0)),
        Expr::Neg(a) => linear_fraction(a).map(|(a, b, c, d)| (-a, -b, c, d)),
        Expr::Add(p, q) | Expr::Sub(p, q) => {
            let s = if matches!(e, Expr::Sub(..)) { -1.0 } else { 1.0 };
            let (a1, b1, c1, d1) = linear_fraction(p)?;
            let (a2, b2, c2, d2) = linear_fraction(q)?;
            let (a2, b2) = (s * a2, s * b2);
            if affine((a1, b1, c1, d1)) && affine((a2, b2, c2, d2)) {
                Some((a1 / d1 + a2 / d2, b1 / d1 + b2 / d2, 0.0, 1.0))
            } else if a2 == 0.0 && c2 == 0.0 {
                let k = b2 / d2;
                Some((a1 + k * c1, b1 + k * d1, c1, d1))
            } else if a1 == 0.0 && c1 == 0.0 {
                let k = b1 / d1;
                Some((a2 + k * c2, b2 + k * d2, c2, d2))
            } else {
                None
            }
        }
        Expr::Mul(p, q) => {
            let f = linear_fraction(p)?;
            let g = linear_fraction(q)?;
            let scale = |(a, b, c, d): Frac, k: f64| (k * a, k * b, c, d);
            if f.0 == 0.0 && f.2 == 0.0 {
                Some(scale(g, f.1 / f.3))
            } else if g.0 == 0.0 && g.2 == 0.0 {
                Some(scale(f, g.1 / g.3))
            } else {
                None
            }
        }
        Expr::Div(p, q) => {
            let (a1, b1, c1, d1) = linear_fraction(p)?;
            let (a2, b2, c2, d2) = linear_fraction(q)?;
            if a2 == 0.0 && c2 == 0.0 {
                let k = b2 / d2;
                Some((a1, b1, c1 * k, d1 * k))
            } else if a1 == 0.0 && c1 == 0.0 {
                let k = b1 / d1;
                Some((k * c2, k * d2, a2, b2))
            } else if c1 == 0.0 && c2 == 0.0 {
                Some((d2 * a1, d2 * b1, d1 * a2, d1 * b2))
            } else {
                None
            }
        }
        Expr::Pow(a, n) => match n {
            0 => Some((0.0, 1.0, 0.0, 1.0)),
            1 => linear_fraction(a),
            -1 => linear_fraction(a).map(|(a, b, c, d)| (c, d, a, b)),
            _ => None,
        },
        Expr::Call(..) => None,
    }
}

/// Whether piece `i` is syntactically a nondegenerate Möbius map with no
/// pole on its closure.
pub fn is_mobius_piece(map: &MapExpr, i: usize) -> bool {
    let p = &map.pieces[i];
    match linear_fraction(&p.expr) {
        Some((a, b, c, d)) => {
            let det = a * d - b * c;
            let den_lo = c * p.lo + d;
            let den_hi = c * p.hi + d;
            det != 0.0 && den_lo != 0.0 && den_hi != 0.0 && (den_lo > 0.0) == (den_hi > 0.0)
        }
        None => false,
    }
}

/// Maximal unions of adjacent Möbius pieces.
pub fn mobius_set(map: &MapExpr) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, p) in map.pieces.iter().enumerate() {
        if !is_mobius_piece(map, i) {
            continue;
        }
        match out.last_mut() {
            Some(last) if last.1 == p.lo => last.1 = p.hi,
            _ => out.push((p.lo, p.hi)),
        }
    }
    out
}

fn complement(map: &MapExpr, set: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut cursor = map.lo;
    for &(a, b) in set {
        if a > cursor {
            out.push((cursor, a));
        }
        cursor = cursor.max(b);
    }
    if cursor < map.hi {
        out.push((cursor, map.hi));
    }
    out
}

fn in_set(set: &[(f64, f64)], y: f64) -> bool {
    set.iter().any(|&(a, b)| a <= y && y <= b)
}

fn meets_set(set: &[(f64, f64)], y: IntervalBox) -> bool {
    set.iter().any(|&(a, b)| y.intersects(&IntervalBox::new(a, b)))
}

/// Largest first-exit time from `set` over a grid, or None if some grid
/// orbit stays `limit` steps.
fn escape_bound_grid(map: &MapExpr, set: &[(f64, f64)], limit: usize) -> Result<Option<usize>> {
    let mut e = 0usize;
    for &(a, b) in set {
        let n = 4096;
        for i in 0..=n {
            let mut x = a + (b - a) * i as f64 / n as f64;
            let mut exit = None;
            for step in 1..=limit {
                x = map.eval(x)?;
                if !in_set(set, x) {
                    exit = Some(step);
                    break;
                }
            }
            match exit {
                Some(s) => e = e.max(s),
                None => return Ok(None),
            }
        }
    }
    Ok(Some(e))
}

/// Escape bound validated by interval orbits with adaptive subdivision.
fn escape_bound_interval(map: &MapExpr, set: &[(f64, f64)], limit: usize) -> Result<Option<usize>> {
    fn exit_time(map: &MapExpr, set: &[(f64, f64)], cell: IntervalBox, limit: usize, depth: u32) -> Result<Option<usize>> {
        let mut x = cell;
        for step in 1..=limit {
            x = map.eval_interval_depth(x, 0, 4)?;
            let dom = map.domain();
            let lo = x.lo.max(dom.lo);
            x = IntervalBox::new(lo, x.hi.min(dom.hi).max(lo));
            if !meets_set(set, x) {
                return Ok(Some(step));
            }
        }
        if depth == 0 {
            return Ok(None);
        }
        let m = cell.mid();
        let l = exit_time(map, set, IntervalBox::new(cell.lo, m), limit, depth - 1)?;
        let r = exit_time(map, set, IntervalBox::new(m, cell.hi), limit, depth - 1)?;
        Ok(match (l, r) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        })
    }
    let mut e = 0usize;
    for &(a, b) in set {
        for c in IntervalBox::new(a, b).split(64) {
            match exit_time(map, set, c, limit, 12)? {
                Some(s) => e = e.max(s),
                None => return Ok(None),
            }
        }
    }
    Ok(Some(e))
}

/// Interval cell bounds on the complement of `set`; returns the cells, the
/// bounds and the largest T.
fn off_set_bounds(map: &MapExpr, set: &[(f64, f64)], settings: &BoundSettings) -> Result<(Vec<IntervalBox>, Vec<CellBound>, f64)> {
    let crit = critical_roots(map);
    let cells: Vec<IntervalBox> = complement(map, set)
        .into_iter()
        .flat_map(|(a, b)| IntervalBox::new(a, b).split(16))
        .collect();
    let bounds: Vec<CellBound> = cells
        .par_iter()
        .map(|&c| cell_bound_interval(map, c, &crit, settings, crate::expr::DEFAULT_DEPTH))
        .collect::<Result<_>>()?;
    let tmax = bounds.iter().map(|b| b.t).fold(f64::NEG_INFINITY, f64::max);
    Ok((cells, bounds, tmax))
}

pub fn mobius_certificate(map: &MapExpr, k_max: usize) -> Result<Outcome> {
    assert!(k_max >= 1);
    let set = mobius_set(map);
    let refuse = |reason: String, bounds: Vec<CellBound>| {
        Ok(Outcome::Refused(Refusal {
            kind: CertKind::Mobius,
            k_max,
            reason,
            blocking_sequence: Vec::new(),
            sum: f64::NAN,
            partition: Vec::new(),
            bounds,
        }))
    };
    let mut escape = 0usize;
    if !set.is_empty() {
        if k_max < 2 {
            return refuse("Möbius pieces present: order at least 2 required".into(), Vec::new());
        }
        let limit = k_max - 1;
        let grid = escape_bound_grid(map, &set, limit)?;
        if grid.is_none() {
            return refuse(format!("some orbit stays in M for {limit} steps"), Vec::new());
        }
        match escape_bound_interval(map, &set, limit)? {
            Some(e) => escape = e,
            None => return refuse(format!("escape within {limit} steps not validated by interval orbits"), Vec::new()),
        }
    }
    let (cells, bounds, tmax) = off_set_bounds(map, &set, &BoundSettings::default())?;
    if !(tmax < 0.0) {
        return refuse(format!("S >= 0 detected off M (bound {tmax:.6e})"), bounds);
    }
    let mut endpoints: Vec<f64> = cells.iter().flat_map(|c| [c.lo, c.hi]).collect();
    endpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    endpoints.dedup();
    Ok(Outcome::Certified(Certificate {
        kind: CertKind::Mobius,
        order_bound: escape + 1,
        rigor: Rigor::Interval,
        partition: endpoints,
        matrix: Vec::new(),
        bounds,
        worst_sequence: Vec::new(),
        worst_sum: tmax,
        excision_radius: EXCISION_REL,
        mobius_pieces: Some(set),
        escape_bound: Some(escape),
        initial_partition: None,
        order_lower_evidence: None,
    }))
}

/// Independent replay of a certificate in interval mode.
pub fn verify_certificate(map: &MapExpr, cert: &Certificate) -> bool {
    verify_inner(map, cert).unwrap_or(false)
}

fn verify_inner(map: &MapExpr, cert: &Certificate) -> Result<bool> {
    if cert.order_bound < 1 {
        return Ok(false);
    }
    let settings = BoundSettings::replay();
    match cert.kind {
        CertKind::Partition => {
            let part = match Partition::for_map(map, cert.partition.clone()) {
                Ok(p) => p,
                Err(_) => return Ok(false),
            };
            let matrix = build_transition_matrix_depth(map, &part, 10)?;
            let crit = critical_roots(map);
            let bounds: Vec<CellBound> = part
                .cells()
                .par_iter()
                .map(|&c| cell_bound_interval(map, c, &crit, &settings, 10))
                .collect::<Result<_>>()?;
            let res = worst_sequence(&matrix, &bounds, cert.order_bound, true);
            Ok(res.worst_sum < 0.0)
        }
        CertKind::Mobius => {
            let claimed = match &cert.mobius_pieces {
                Some(p) => p.clone(),
                None => return Ok(false),
            };
            let actual = mobius_set(map);
            let structural = claimed
                .iter()
                .all(|&(a, b)| a < b && actual.iter().any(|&(c, d)| c <= a && b <= d));
            if !structural {
                return Ok(false);
            }
            if !claimed.is_empty() {
                if cert.order_bound < 2 {
                    return Ok(false);
                }
                match escape_bound_interval(map, &claimed, cert.order_bound - 1)? {
                    Some(e) if e < cert.order_bound => {}
                    _ => return Ok(false),
                }
            }
            let (_, _, tmax) = off_set_bounds(map, &claimed, &settings)?;
            Ok(tmax < 0.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn map(s: &str) -> MapExpr {
        MapExpr::parse(s, (0.0, 1.0), &BTreeMap::new()).unwrap()
    }

    #[test]
    fn logistic_two_cell_matrix() {
        let m = map("4*x*(1-x)");
        let p = Partition::new(vec![0.0, 0.5, 1.0]).unwrap();
        let a = build_transition_matrix(&m, &p).unwrap();
        assert!(a.a.iter().all(|r| r.iter().all(|&b| b)));
    }

    #[test]
    fn logistic_cell_bound() {
        let m = map("4*x*(1-x)");
        let p = Partition::new(vec![0.0, 0.6, 0.9, 1.0]).unwrap();
        let b = compute_cell_bounds(&m, &p, Rigor::Interval).unwrap();
        let t = b.cells[1].t;
        assert!(t <= -9.37 + 1e-3, "T = {t}");
        assert!(t > -9.38);
    }

    #[test]
    fn linear_fraction_classifies() {
        let e = crate::expr::parse_expr("(2*x+1)/(x+3)", &BTreeMap::new()).unwrap();
        assert_eq!(linear_fraction(&e), Some((2.0, 1.0, 1.0, 3.0)));
        let e = crate::expr::parse_expr("x*x", &BTreeMap::new()).unwrap();
        assert_eq!(linear_fraction(&e), None);
        let e = crate::expr::parse_expr("1/(x+2) - 3", &BTreeMap::new()).unwrap();
        assert!(linear_fraction(&e).is_some());
    }

    #[test]
    fn terms_follow_sign_rule() {
        let b = [
            CellBound { t: 2.0, m: 0.5, big_m: 4.0 },
            CellBound { t: -3.0, m: 0.25, big_m: 1.0 },
        ];
        assert_eq!(sequence_terms(&b, &[0, 1]), vec![2.0, -1.5]);
        assert_eq!(sequence_terms(&b, &[1, 0]), vec![-3.0, 2.0]);
    }
}

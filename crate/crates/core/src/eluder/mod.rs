//! Weak eluder independence over finite probe sets, greedy and exact
//! longest-sequence search, the per-step mean-field dimension and explicit
//! sequence-lemma checks.
//!
//! An [`EluderProblem`] stores only the pairwise distances `D(f_i, f_j)(x)`,
//! which is all the definitions need. The history premise is tested as
//! `sqrt(sum) <= eps'` with the sum always taken in ascending probe order, and
//! the separation as `eps' < D / alpha`, so the greedy search, the
//! independence test and the exact oracle agree bit for bit.

mod bounds;
mod mbed;

pub use bounds::{linear_dim_bound, regret_bound_check, RegretCheck};
pub use mbed::{mf_mbed, MbedReport, MbedRow, ProbeSpec};

use serde::{Deserialize, Serialize};

use crate::density::{gaussian_hellinger_unchecked, hellinger_unchecked, tv_unchecked};
use crate::error::{MfError, Result};

/// Largest instance accepted by [`brute_force_dim`].
pub const MAX_ORACLE_PROBES: usize = 10;
pub const MAX_ORACLE_FUNCTIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Tv,
    Hellinger,
}

impl DistanceKind {
    pub fn name(self) -> &'static str {
        match self {
            DistanceKind::Tv => "tv",
            DistanceKind::Hellinger => "hellinger",
        }
    }

    fn eval(self, p: &[f64], q: &[f64]) -> f64 {
        match self {
            DistanceKind::Tv => tv_unchecked(p, q),
            DistanceKind::Hellinger => hellinger_unchecked(p, q),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EluderProblem {
    functions: usize,
    probes: usize,
    /// `dist[pair_index(i, j)][x]` for `i < j`.
    dist: Vec<Vec<f64>>,
    distance: DistanceKind,
    alpha: f64,
    epsilon: f64,
    bound: f64,
}

fn premise_ok(sum_sq: f64, eps_prime: f64) -> bool {
    sum_sq.sqrt() <= eps_prime
}

fn check_params(alpha: f64, epsilon: f64) -> Result<()> {
    if !(alpha >= 1.0) || !alpha.is_finite() {
        return Err(MfError::Parameter(format!("alpha must be >= 1, got {alpha}")));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(MfError::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

impl EluderProblem {
    /// `values[f][x]` is the distribution `f(x)`.
    pub fn from_distributions(values: &[Vec<Vec<f64>>], distance: DistanceKind, alpha: f64, epsilon: f64) -> Result<Self> {
        let probes = values.first().map_or(0, Vec::len);
        if values.iter().any(|f| f.len() != probes) {
            return Err(MfError::Dimension("every function needs one value per probe".into()));
        }
        let width = values.first().and_then(|f| f.first()).map_or(0, Vec::len);
        if values.iter().flatten().any(|p| p.len() != width) {
            return Err(MfError::Dimension("distribution lengths differ".into()));
        }
        Self::from_pair_fn(values.len(), probes, distance, alpha, epsilon, |i, j, x| {
            distance.eval(&values[i][x], &values[j][x])
        })
    }

    /// Gaussian outputs `N(means[f][x], sigma² I)`; Hellinger distance only.
    pub fn from_gaussian_means(means: &[Vec<Vec<f64>>], sigma: f64, alpha: f64, epsilon: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(MfError::Parameter(format!("sigma must be positive, got {sigma}")));
        }
        let probes = means.first().map_or(0, Vec::len);
        if means.iter().any(|f| f.len() != probes) {
            return Err(MfError::Dimension("every function needs one value per probe".into()));
        }
        Self::from_pair_fn(means.len(), probes, DistanceKind::Hellinger, alpha, epsilon, |i, j, x| {
            gaussian_hellinger_unchecked(&means[i][x], &means[j][x], sigma)
        })
    }

    /// Directly from the pair table, `dist[pair_index(i, j)][x]`, with distance bound 1.
    pub fn from_pair_distances(
        functions: usize,
        dist: Vec<Vec<f64>>,
        distance: DistanceKind,
        alpha: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let probes = dist.first().map_or(0, Vec::len);
        if dist.len() != functions * functions.saturating_sub(1) / 2 || dist.iter().any(|r| r.len() != probes) {
            return Err(MfError::Dimension("pair table has the wrong shape".into()));
        }
        if dist.iter().flatten().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(MfError::Parameter("distances must lie in [0, 1]".into()));
        }
        let p = EluderProblem { functions, probes, dist, distance, alpha, epsilon, bound: 1.0 };
        p.validate()?;
        Ok(p)
    }

    fn from_pair_fn(
        functions: usize,
        probes: usize,
        distance: DistanceKind,
        alpha: f64,
        epsilon: f64,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut dist = Vec::with_capacity(functions * functions.saturating_sub(1) / 2);
        for i in 0..functions {
            for j in i + 1..functions {
                dist.push((0..probes).map(|x| f(i, j, x)).collect());
            }
        }
        let p = EluderProblem { functions, probes, dist, distance, alpha, epsilon, bound: 1.0 };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        check_params(self.alpha, self.epsilon)?;
        if self.probes == 0 {
            return Err(MfError::Dimension("probe set is empty".into()));
        }
        if self.functions == 0 {
            return Err(MfError::Dimension("function class is empty".into()));
        }
        Ok(())
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        check_params(alpha, self.epsilon)?;
        self.alpha = alpha;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        check_params(self.alpha, epsilon)?;
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn functions(&self) -> usize {
        self.functions
    }

    pub fn probes(&self) -> usize {
        self.probes
    }

    pub fn distance(&self) -> DistanceKind {
        self.distance
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Upper bound `C` on the distance.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn pair_count(&self) -> usize {
        self.dist.len()
    }

    /// Index of the unordered pair `{i, j}` in lexicographic order.
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        debug_assert!(j < self.functions && i != j);
        i * (2 * self.functions - i - 1) / 2 + (j - i - 1)
    }

    fn pair_members(&self, k: usize) -> (usize, usize) {
        let mut k = k;
        for i in 0..self.functions {
            let row = self.functions - i - 1;
            if k < row {
                return (i, i + 1 + k);
            }
            k -= row;
        }
        unreachable!("pair index out of range")
    }

    /// `D(f_i, f_j)(x)`; zero on the diagonal.
    pub fn dist(&self, i: usize, j: usize, x: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.dist[self.pair_index(i, j)][x]
        }
    }

    /// Canonical history sum: ascending probe order, whatever the sequence order.
    fn sum_sq(&self, pair: usize, history: &[usize]) -> f64 {
        let mut sorted = history.to_vec();
        sorted.sort_unstable();
        self.sorted_sum_sq(pair, &sorted)
    }

    fn sorted_sum_sq(&self, pair: usize, sorted: &[usize]) -> f64 {
        sorted.iter().map(|&t| self.dist[pair][t] * self.dist[pair][t]).sum()
    }

    fn independent_at(&self, pair: usize, x: usize, history_sum_sq: f64, eps_prime: f64) -> bool {
        premise_ok(history_sum_sq, eps_prime) && self.hits(pair, x, eps_prime)
    }

    fn hits(&self, pair: usize, x: usize, eps_prime: f64) -> bool {
        eps_prime < self.dist[pair][x] / self.alpha
    }

    /// Default greedy grid `eps * 1.25^j`, `j = 0..=16`.
    pub fn default_grid(&self) -> Vec<f64> {
        (0..=16).map(|j| self.epsilon * 1.25f64.powi(j)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub f1: usize,
    pub f2: usize,
    pub eps_prime: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndependentSequence {
    pub points: Vec<usize>,
    pub witnesses: Vec<Witness>,
}

impl IndependentSequence {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Re-checks every witness: `sum_{t<i} D² <= eps'²`, `D(x_i) > alpha eps'`, `eps' >= eps`.
    pub fn verify(&self, p: &EluderProblem) -> bool {
        if self.points.len() != self.witnesses.len() {
            return false;
        }
        self.points.iter().zip(&self.witnesses).enumerate().all(|(i, (&x, w))| {
            if w.f1 == w.f2 || w.f1.max(w.f2) >= p.functions || x >= p.probes || w.eps_prime < p.epsilon {
                return false;
            }
            let pair = p.pair_index(w.f1, w.f2);
            p.independent_at(pair, x, p.sum_sq(pair, &self.points[..i]), w.eps_prime)
        })
    }
}

/// First ordered pair `(f1, f2)` in lexicographic order witnessing that `x` is
/// alpha-weakly-`eps_prime`-independent of `history`. Values of `eps_prime`
/// below the problem's epsilon are raised to it.
pub fn independence_test(p: &EluderProblem, x: usize, history: &[usize], eps_prime: f64) -> Option<Witness> {
    let eps_prime = eps_prime.max(p.epsilon);
    for f1 in 0..p.functions {
        for f2 in 0..p.functions {
            if f1 == f2 {
                continue;
            }
            let pair = p.pair_index(f1, f2);
            if p.independent_at(pair, x, p.sum_sq(pair, history), eps_prime) {
                return Some(Witness { f1, f2, eps_prime });
            }
        }
    }
    None
}

/// Longest independent sequence found by cheap searches at each grid value
/// (earliest grid value and earliest strategy on ties). A lower bound on the
/// dimension.
///
/// Two strategies run per `eps'`: a single in-order scan appending every
/// probe independent of the current sequence, and a backward construction.
/// The latter keeps a candidate set and repeatedly moves to the tail of the
/// sequence any candidate that is independent of all the others. Such a move
/// never loses length, since any valid ordering of the rest stays valid with
/// that probe appended. When no candidate can go last, one is discarded: on
/// small sets the one whose removal lets the longest run of moves follow, on
/// larger sets the one whose removal frees the most candidates. Small sets
/// also try a bounded number of alternative discards.
pub fn greedy_dim(p: &EluderProblem, eps_grid: &[f64]) -> IndependentSequence {
    let mut best = IndependentSequence::default();
    for &e in eps_grid {
        let e = e.max(p.epsilon);
        for seq in [scan_at(p, e), Backward::new(p, e).run()] {
            if seq.len() > best.len() {
                best = seq;
            }
        }
    }
    best
}

fn scan_at(p: &EluderProblem, eps_prime: f64) -> IndependentSequence {
    let mut seq = IndependentSequence::default();
    for x in 0..p.probes {
        if let Some(w) = independence_test(p, x, &seq.points, eps_prime) {
            seq.points.push(x);
            seq.witnesses.push(w);
        }
    }
    seq
}

/// Candidate sets up to this size use the run-length discard rule and may branch.
const LOOKAHEAD_LIMIT: usize = 24;
/// Alternative discards explored per grid value.
const BRANCH_BUDGET: usize = 512;

struct Backward<'a> {
    p: &'a EluderProblem,
    eps: f64,
    /// `sq[pair][x] = D²`.
    sq: Vec<Vec<f64>>,
    hit: Vec<Vec<bool>>,
}

impl<'a> Backward<'a> {
    fn new(p: &'a EluderProblem, eps: f64) -> Self {
        let sq = p.dist.iter().map(|row| row.iter().map(|d| d * d).collect()).collect();
        let hit = (0..p.pair_count()).map(|k| (0..p.probes).map(|x| p.hits(k, x, eps)).collect()).collect();
        Backward { p, eps, sq, hit }
    }

    fn totals(&self, set: &[usize]) -> Vec<f64> {
        self.sq.iter().map(|row| set.iter().map(|&x| row[x]).sum()).collect()
    }

    /// Can `x` go last among `set` (totals `tot`), ignoring `without`? The
    /// subtracted totals decide clear cases; near the boundary the canonical
    /// sum is recomputed so decisions match the exact oracle.
    fn can_last(&self, set: &[usize], tot: &[f64], x: usize, without: Option<usize>) -> bool {
        (0..self.sq.len()).any(|k| {
            if !self.hit[k][x] {
                return false;
            }
            let rest = tot[k] - self.sq[k][x] - without.map_or(0.0, |y| self.sq[k][y]);
            let e2 = self.eps * self.eps;
            if rest < e2 * (1.0 - 1e-9) {
                true
            } else if rest > e2 * (1.0 + 1e-9) {
                false
            } else {
                let others: Vec<usize> = set.iter().copied().filter(|&y| y != x && Some(y) != without).collect();
                premise_ok(self.p.sorted_sum_sq(k, &others), self.eps)
            }
        })
    }

    /// Number of consecutive tail moves possible from `set`.
    fn run_length(&self, mut set: Vec<usize>) -> usize {
        let mut moved = 0;
        let mut tot = self.totals(&set);
        while let Some(pos) = set.iter().position(|&x| self.can_last(&set, &tot, x, None)) {
            let x = set.remove(pos);
            for (t, row) in tot.iter_mut().zip(&self.sq) {
                *t -= row[x];
            }
            moved += 1;
        }
        moved
    }

    /// Discard candidates, best first: by the score of the rule above, then
    /// by total squared distance.
    fn discard_order(&self, set: &[usize], tot: &[f64]) -> Vec<usize> {
        let mut ranked: Vec<(usize, f64, usize)> = set
            .iter()
            .enumerate()
            .map(|(pos, &x)| {
                let score = if set.len() <= LOOKAHEAD_LIMIT {
                    let mut rest = set.to_vec();
                    rest.remove(pos);
                    self.run_length(rest)
                } else {
                    set.iter().filter(|&&y| y != x && self.can_last(set, tot, y, Some(x))).count()
                };
                let mass: f64 = self.sq.iter().map(|row| row[x]).sum();
                (score, mass, pos)
            })
            .collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
        ranked.into_iter().map(|r| r.2).collect()
    }

    /// Moves candidates to the tail while possible, then branches on discards.
    /// The first-ranked discard is always followed; other discards are tried
    /// on sets of at most `LOOKAHEAD_LIMIT` while `budget` lasts.
    fn search(&self, mut set: Vec<usize>, mut tail: Vec<usize>, best: &mut Vec<usize>, budget: &mut usize) {
        loop {
            if tail.len() + set.len() <= best.len() {
                return;
            }
            let tot = self.totals(&set);
            match set.iter().position(|&x| self.can_last(&set, &tot, x, None)) {
                Some(pos) => tail.push(set.remove(pos)),
                None if set.is_empty() => break,
                None => {
                    let order = self.discard_order(&set, &tot);
                    let branch = set.len() <= LOOKAHEAD_LIMIT;
                    for (i, &pos) in order.iter().enumerate() {
                        if i > 0 {
                            if !branch || *budget == 0 {
                                break;
                            }
                            *budget -= 1;
                        }
                        let mut rest = set.clone();
                        rest.remove(pos);
                        self.search(rest, tail.clone(), best, budget);
                    }
                    return;
                }
            }
        }
        if tail.len() > best.len() {
            *best = tail;
        }
    }

    fn run(self) -> IndependentSequence {
        let set: Vec<usize> = (0..self.p.probes).filter(|&x| self.hit.iter().any(|h| h[x])).collect();
        let mut tail = Vec::new();
        let mut budget = BRANCH_BUDGET;
        self.search(set, Vec::new(), &mut tail, &mut budget);
        // Witnesses are recomputed in the final order; a point failing by rounding is dropped.
        let mut seq = IndependentSequence::default();
        for &x in tail.iter().rev() {
            if let Some(w) = independence_test(self.p, x, &seq.points, self.eps) {
                seq.points.push(x);
                seq.witnesses.push(w);
            }
        }
        seq
    }
}

/// Every `eps'` value at which the exact oracle's feasibility can change:
/// `eps` itself and `sqrt` of each per-pair subset sum of squared distances
/// that is at least `eps`. Sorted and deduplicated.
pub fn oracle_eps_set(p: &EluderProblem) -> Result<Vec<f64>> {
    check_oracle_size(p)?;
    let mut out = vec![p.epsilon];
    for pair in 0..p.pair_count() {
        for mask in 1usize..1 << p.probes {
            let v = mask_sum_sq(p, pair, mask).sqrt();
            if v >= p.epsilon && v.is_finite() {
                out.push(v);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

fn check_oracle_size(p: &EluderProblem) -> Result<()> {
    if p.probes > MAX_ORACLE_PROBES || p.functions > MAX_ORACLE_FUNCTIONS {
        return Err(MfError::TooLarge(format!(
            "exact oracle supports at most {MAX_ORACLE_PROBES} probes and {MAX_ORACLE_FUNCTIONS} functions, got {} and {}",
            p.probes, p.functions
        )));
    }
    Ok(())
}

/// Sum over the set bits in ascending probe order, matching the greedy scan.
fn mask_sum_sq(p: &EluderProblem, pair: usize, mask: usize) -> f64 {
    (0..p.probes).filter(|x| mask >> x & 1 == 1).map(|x| p.dist[pair][x] * p.dist[pair][x]).sum()
}

/// Sorted, disjoint half-open intervals `[lo, hi)` of admissible `eps'`.
type IntervalSet = Vec<(f64, f64)>;

fn normalize(mut v: IntervalSet) -> IntervalSet {
    v.retain(|(lo, hi)| lo < hi);
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: IntervalSet = Vec::with_capacity(v.len());
    for (lo, hi) in v {
        match out.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}

/// Exact dimension over the probe set: the longest ordered probe sequence
/// admitting a single `eps' >= eps` under which every point is independent of
/// its predecessors. Independence depends only on the predecessor set, so a
/// dynamic program over subsets suffices; each subset carries the exact set of
/// feasible `eps'` as a union of intervals.
pub fn brute_force_dim(p: &EluderProblem) -> Result<usize> {
    check_oracle_size(p)?;
    let n = p.probes;
    let pairs = p.pair_count();
    let mut sums = vec![vec![0.0; 1 << n]; pairs];
    for (pair, table) in sums.iter_mut().enumerate() {
        for (mask, slot) in table.iter_mut().enumerate() {
            *slot = mask_sum_sq(p, pair, mask);
        }
    }
    let mut feasible: Vec<IntervalSet> = vec![Vec::new(); 1 << n];
    feasible[0] = vec![(p.epsilon, f64::INFINITY)];
    let mut best = 0;
    // Masks in increasing numeric order visit every subset before its supersets.
    for mask in 0usize..1 << n {
        if feasible[mask].is_empty() {
            continue;
        }
        best = best.max(mask.count_ones() as usize);
        let current = std::mem::take(&mut feasible[mask]);
        for x in (0..n).filter(|x| mask >> x & 1 == 0) {
            let mut add = Vec::new();
            for (pair, table) in sums.iter().enumerate() {
                let lo = table[mask].sqrt();
                let hi = p.dist[pair][x] / p.alpha;
                for &(a, b) in &current {
                    add.push((a.max(lo), b.min(hi)));
                }
            }
            let next = mask | 1 << x;
            let mut merged = std::mem::take(&mut feasible[next]);
            merged.extend(add);
            feasible[next] = normalize(merged);
        }
        feasible[mask] = current;
    }
    Ok(best)
}

/// Witness pair as stored, for reporting.
pub fn witness_pair(p: &EluderProblem, pair: usize) -> (usize, usize) {
    p.pair_members(pair)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> EluderProblem {
        // f1, f2 differ by 0.5 at probe 0 and agree at probe 1.
        EluderProblem::from_pair_distances(2, vec![vec![0.5, 0.0]], DistanceKind::Tv, 1.0, 0.3).unwrap()
    }

    #[test]
    fn singleton_class_has_no_witness() {
        let p = EluderProblem::from_distributions(&[vec![vec![0.2, 0.8]]], DistanceKind::Tv, 1.0, 0.1).unwrap();
        assert_eq!(independence_test(&p, 0, &[], 0.1), None);
        assert_eq!(greedy_dim(&p, &p.default_grid()).len(), 0);
        assert_eq!(brute_force_dim(&p).unwrap(), 0);
    }

    #[test]
    fn empty_history_witness() {
        let p = two_point();
        assert_eq!(independence_test(&p, 0, &[], 0.3), Some(Witness { f1: 0, f2: 1, eps_prime: 0.3 }));
    }

    #[test]
    fn large_history_blocks() {
        let p = EluderProblem::from_pair_distances(2, vec![vec![0.5, 0.5]], DistanceKind::Tv, 1.0, 0.3).unwrap();
        assert_eq!(independence_test(&p, 1, &[0], 0.3), None);
    }

    #[test]
    fn two_point_dimension_is_one() {
        let p = two_point();
        let g = greedy_dim(&p, &p.default_grid());
        assert_eq!(g.len(), 1);
        assert!(g.verify(&p));
        assert_eq!(brute_force_dim(&p).unwrap(), 1);
    }

    #[test]
    fn dirac_distinguishing_class_reaches_probe_count() {
        for m in 1..=6 {
            // Baseline f_0 = delta_0 everywhere; f_i moves to delta_1 only at probe i - 1.
            let values: Vec<Vec<Vec<f64>>> = (0..=m)
                .map(|i| (0..m).map(|x| if x + 1 == i { vec![0.0, 1.0] } else { vec![1.0, 0.0] }).collect())
                .collect();
            let p = EluderProblem::from_distributions(&values, DistanceKind::Tv, 1.0, 0.5).unwrap();
            assert_eq!(greedy_dim(&p, &p.default_grid()).len(), m, "m = {m}");
            assert_eq!(brute_force_dim(&p).unwrap(), m, "m = {m}");
        }
    }

    #[test]
    fn pair_index_is_lexicographic() {
        let p = EluderProblem::from_pair_distances(4, vec![vec![0.0]; 6], DistanceKind::Tv, 1.0, 0.1).unwrap();
        let mut k = 0;
        for i in 0..4 {
            for j in i + 1..4 {
                assert_eq!(p.pair_index(i, j), k);
                assert_eq!(p.pair_index(j, i), k);
                assert_eq!(witness_pair(&p, k), (i, j));
                k += 1;
            }
        }
    }

    #[test]
    fn oracle_rejects_large_instances() {
        let p = EluderProblem::from_pair_distances(2, vec![vec![0.1; 11]], DistanceKind::Tv, 1.0, 0.1).unwrap();
        assert!(matches!(brute_force_dim(&p), Err(MfError::TooLarge(_))));
    }

    #[test]
    fn interval_merge() {
        assert_eq!(normalize(vec![(0.3, 0.5), (0.1, 0.3), (0.6, 0.6), (0.7, 0.9)]), vec![(0.1, 0.5), (0.7, 0.9)]);
    }
}

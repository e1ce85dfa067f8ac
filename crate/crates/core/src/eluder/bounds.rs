use serde::{Deserialize, Serialize};

use super::{brute_force_dim, EluderProblem};
use crate::error::{MfError, Result};

/// Largest `n` with `(3/2)^n <= (1 + n k)^d`, `k = C_phi² C² / (d eps²)`.
///
/// The log-gap `d ln(1 + n k) - n ln(3/2)` is concave and zero at `n = 0`,
/// so the admissible set is an interval starting at zero.
pub fn linear_dim_bound(d: usize, c_phi: f64, c_const: f64, epsilon: f64) -> Result<usize> {
    if d == 0 || !(c_phi > 0.0) || !(c_const > 0.0) || !(epsilon > 0.0) {
        return Err(MfError::Parameter("linear_dim_bound needs positive parameters".into()));
    }
    let df = d as f64;
    let k = c_phi * c_phi * c_const * c_const / (df * epsilon * epsilon);
    let ok = |n: u64| df * (n as f64 * k).ln_1p() >= n as f64 * 1.5f64.ln();
    let mut hi: u64 = 1;
    while ok(hi) {
        hi = hi.checked_mul(2).ok_or_else(|| MfError::Numerical("bound search overflowed".into()))?;
    }
    // ok(lo) holds, ok(hi) fails.
    let mut lo = hi / 2;
    if hi == 1 {
        lo = 0;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    usize::try_from(lo).map_err(|_| MfError::Numerical("bound exceeds usize".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCheck {
    pub rounds: usize,
    pub dim_exact: usize,
    /// `#{k : D(f_k, f*)(x_k) > alpha eps}`.
    pub violations: usize,
    /// `(beta / eps² + 1) dim`.
    pub violation_bound: f64,
    pub violation_ok: bool,
    pub distance_sum: f64,
    /// `alpha K eps + (dim + 1) C + 2 alpha sqrt(beta K dim)`.
    pub distance_bound: f64,
    pub distance_ok: bool,
}

impl RegretCheck {
    pub fn passed(&self) -> bool {
        self.violation_ok && self.distance_ok
    }
}

/// Checks the violation-count and cumulative-distance bounds for the rounds
/// `(f_k, x_k)` against `f_star`, with the dimension from the exact oracle.
/// The premise `sum_{i<k} D²(f_k, f*)(x_i) <= beta` is verified for every `k`.
pub fn regret_bound_check(rounds: &[(usize, usize)], f_star: usize, beta: f64, p: &EluderProblem) -> Result<RegretCheck> {
    if !(beta >= 0.0) {
        return Err(MfError::Parameter(format!("beta must be nonnegative, got {beta}")));
    }
    if f_star >= p.functions() || rounds.iter().any(|&(f, x)| f >= p.functions() || x >= p.probes()) {
        return Err(MfError::Index("function or probe index out of range".into()));
    }
    for (k, &(f, _)) in rounds.iter().enumerate() {
        let past: f64 = rounds[..k].iter().map(|&(_, x)| p.dist(f, f_star, x).powi(2)).sum();
        if past > beta {
            return Err(MfError::Precondition(format!("round {k}: history sum {past} exceeds beta {beta}")));
        }
    }
    let dim = brute_force_dim(p)?;
    let (alpha, eps, c) = (p.alpha(), p.epsilon(), p.bound());
    let distances: Vec<f64> = rounds.iter().map(|&(f, x)| p.dist(f, f_star, x)).collect();
    let violations = distances.iter().filter(|&&d| d > alpha * eps).count();
    let violation_bound = (beta / (eps * eps) + 1.0) * dim as f64;
    let distance_sum: f64 = distances.iter().sum();
    let kf = rounds.len() as f64;
    let df = dim as f64;
    let distance_bound = alpha * kf * eps + (df + 1.0) * c + 2.0 * alpha * (beta * kf * df).sqrt();
    Ok(RegretCheck {
        rounds: rounds.len(),
        dim_exact: dim,
        violations,
        violation_bound,
        violation_ok: violations as f64 <= violation_bound,
        distance_sum,
        distance_bound,
        distance_ok: distance_sum <= distance_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eluder::DistanceKind;

    #[test]
    fn large_epsilon_forces_zero() {
        assert_eq!(linear_dim_bound(1, 1.0, 1.0, 10.0).unwrap(), 0);
    }

    #[test]
    fn bound_matches_linear_scan() {
        for d in 1..=4 {
            for &eps in &[0.05, 0.2, 1.0] {
                let n = linear_dim_bound(d, 1.0, 1.5, eps).unwrap();
                let k = 1.5f64.powi(2) / (d as f64 * eps * eps);
                let holds = |n: usize| 1.5f64.powi(n as i32) <= (1.0 + n as f64 * k).powi(d as i32);
                assert!(holds(n));
                assert!(!(n + 1..n + 50).any(holds));
            }
        }
    }

    #[test]
    fn bound_monotone_in_d_and_eps() {
        let mut prev = 0;
        for d in 1..=8 {
            let n = linear_dim_bound(d, 1.0, 1.0, 0.1).unwrap();
            assert!(n >= prev);
            prev = n;
        }
        let mut prev = 0;
        for j in 0..20 {
            let n = linear_dim_bound(3, 1.0, 1.0, 2.0 * 0.8f64.powi(j)).unwrap();
            assert!(n >= prev);
            prev = n;
        }
    }

    #[test]
    fn zero_distances_pass() {
        let p = EluderProblem::from_pair_distances(2, vec![vec![0.0; 3]], DistanceKind::Tv, 1.0, 0.1).unwrap();
        let r = regret_bound_check(&[(0, 0), (1, 1), (0, 2)], 1, 0.0, &p).unwrap();
        assert_eq!(r.distance_sum, 0.0);
        assert_eq!(r.violations, 0);
        assert!(r.passed());
    }

    #[test]
    fn single_round_within_c() {
        let p = EluderProblem::from_pair_distances(2, vec![vec![0.9]], DistanceKind::Tv, 1.0, 0.1).unwrap();
        let r = regret_bound_check(&[(0, 0)], 1, 0.0, &p).unwrap();
        assert!(r.distance_ok);
    }

    #[test]
    fn premise_violation_is_an_error() {
        let p = EluderProblem::from_pair_distances(2, vec![vec![0.9, 0.9]], DistanceKind::Tv, 1.0, 0.1).unwrap();
        assert!(matches!(regret_bound_check(&[(0, 0), (0, 1)], 1, 0.5, &p), Err(MfError::Precondition(_))));
    }
}

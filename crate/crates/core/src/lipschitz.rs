//! Lipschitz constants of the transition and reward families with respect to
//! the conditioning density, and bounds on the population operator.
//!
//! Every discrete family is linear in `mu` once written through its vertex
//! kernels `V_x = P(. | s, a, delta_x)`, so `P(. | s, a, mu) = sum_x mu(x) V_x`.
//! The supremum of `TV(P(mu), P(mu')) / TV(mu, mu')` is attained at a pair of
//! vertices, which makes the transition constant exact.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{random_simplex, tv_unchecked, Density};
use crate::dynamics::density_propagate;
use crate::error::Result;
use crate::model::MeanFieldModel;
use crate::policy::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    /// Largest ratio observed on random `(mu, mu', pi)` triples.
    pub sampled_lower: f64,
    /// `1 + L_T`.
    pub trivial_upper: f64,
    /// `max_h (dobrushin_h + L_T)`, valid for every policy.
    pub certified_upper: f64,
    pub is_estimate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub transition: f64,
    pub reward: f64,
    pub gamma: GammaEstimate,
}

/// `V_x` for every `x`, flattened `[x][s']`.
fn vertex_kernels(m: &MeanFieldModel, h: usize, s: usize, a: usize) -> Vec<f64> {
    let n = m.states();
    let mut out = vec![0.0; n * n];
    for x in 0..n {
        let e = Density::dirac(n, x);
        m.transition_into(h, s, a, e.probs(), &mut out[x * n..(x + 1) * n]);
    }
    out
}

/// Exact `L_T` restricted to step `h`.
pub fn transition_lipschitz_at(m: &MeanFieldModel, h: usize) -> Result<f64> {
    m.require_discrete()?;
    let n = m.states();
    let mut best: f64 = 0.0;
    for s in 0..n {
        for a in 0..m.actions() {
            let v = vertex_kernels(m, h, s, a);
            for x in 0..n {
                for y in x + 1..n {
                    best = best.max(tv_unchecked(&v[x * n..(x + 1) * n], &v[y * n..(y + 1) * n]));
                }
            }
        }
    }
    Ok(best)
}

/// Exact `L_T = max_{h,s,a,x,x'} TV(V_x, V_x')`.
pub fn transition_lipschitz(m: &MeanFieldModel) -> Result<f64> {
    let mut best: f64 = 0.0;
    for h in 0..m.horizon() {
        best = best.max(transition_lipschitz_at(m, h)?);
    }
    Ok(best)
}

/// Exact `L_r = max_{h,s,a} (max_x R1 - min_x R1)`; the clip is 1-Lipschitz.
pub fn reward_lipschitz(m: &MeanFieldModel) -> f64 {
    m.reward()
        .r1
        .chunks(m.states())
        .map(|row| {
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// Dobrushin-type bound at step `h`: largest TV between any two vertex kernels
/// over all `(s, a, x)`. Any two rows of the policy-mixed kernel at a common
/// `mu` are within this distance.
pub fn dobrushin_bound(m: &MeanFieldModel, h: usize) -> Result<f64> {
    m.require_discrete()?;
    let n = m.states();
    let mut cols = Vec::with_capacity(n * m.actions());
    for s in 0..n {
        for a in 0..m.actions() {
            cols.push(vertex_kernels(m, h, s, a));
        }
    }
    let flat: Vec<&[f64]> = cols.iter().flat_map(|v| v.chunks(n)).collect();
    let mut best: f64 = 0.0;
    for i in 0..flat.len() {
        for j in i + 1..flat.len() {
            best = best.max(tv_unchecked(flat[i], flat[j]));
        }
    }
    Ok(best)
}

/// Policy-independent upper bound on the population operator's TV Lipschitz
/// constant: `max_h (dobrushin_h + L_T(h))`. Only the first `H - 1` steps move
/// the population.
pub fn certified_gamma_bound(m: &MeanFieldModel) -> Result<f64> {
    let mut best: f64 = 0.0;
    for h in 0..m.horizon().saturating_sub(1).max(1) {
        best = best.max(dobrushin_bound(m, h)? + transition_lipschitz_at(m, h)?);
    }
    Ok(best)
}

fn random_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (Density, Density) {
    if n > 1 && rng.random_bool(0.3) {
        let x = rng.random_range(0..n);
        let mut y = rng.random_range(0..n - 1);
        if y >= x {
            y += 1;
        }
        (Density::dirac(n, x), Density::dirac(n, y))
    } else {
        (Density::random(n, rng), Density::random(n, rng))
    }
}

/// Largest observed `TV(Gamma(mu), Gamma(mu')) / TV(mu, mu')` over random
/// triples; a lower bound on the true constant.
pub fn sampled_gamma_lower<R: Rng + ?Sized>(m: &MeanFieldModel, samples: usize, rng: &mut R) -> Result<f64> {
    m.require_discrete()?;
    let (n, na, horizon) = (m.states(), m.actions(), m.horizon());
    let steps = horizon.saturating_sub(1).max(1);
    let mut best: f64 = 0.0;
    for _ in 0..samples {
        let h = rng.random_range(0..steps);
        let pi = if rng.random_bool(0.5) {
            let choice: Vec<usize> = (0..horizon * n).map(|_| rng.random_range(0..na)).collect();
            Policy::deterministic(horizon, n, na, &choice)
        } else {
            Policy::random(horizon, n, na, rng)
        };
        let (mu, nu) = random_pair(n, rng);
        let base = tv_unchecked(mu.probs(), nu.probs());
        if base < 1e-9 {
            continue;
        }
        let a = density_propagate(m, h, &mu, &pi)?;
        let b = density_propagate(m, h, &nu, &pi)?;
        best = best.max(tv_unchecked(a.probs(), b.probs()) / base);
    }
    Ok(best)
}

/// Largest observed `TV(P(mu), P(mu')) / TV(mu, mu')` over random `(h, s, a, mu, mu')`.
pub fn sampled_transition_ratio<R: Rng + ?Sized>(m: &MeanFieldModel, samples: usize, rng: &mut R) -> Result<f64> {
    m.require_discrete()?;
    let n = m.states();
    let mut best: f64 = 0.0;
    let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..samples {
        let h = rng.random_range(0..m.horizon());
        let s = rng.random_range(0..n);
        let a = rng.random_range(0..m.actions());
        let mu = random_simplex(n, rng);
        let nu = random_simplex(n, rng);
        let base = tv_unchecked(&mu, &nu);
        if base < 1e-9 {
            continue;
        }
        m.transition_into(h, s, a, &mu, &mut p);
        m.transition_into(h, s, a, &nu, &mut q);
        best = best.max(tv_unchecked(&p, &q) / base);
    }
    Ok(best)
}

pub fn lipschitz_constants<R: Rng + ?Sized>(m: &MeanFieldModel, samples: usize, rng: &mut R) -> Result<LipschitzReport> {
    let transition = transition_lipschitz(m)?;
    let gamma = GammaEstimate {
        sampled_lower: sampled_gamma_lower(m, samples, rng)?,
        trivial_upper: 1.0 + transition,
        certified_upper: certified_gamma_bound(m)?,
        is_estimate: true,
    };
    Ok(LipschitzReport { transition, reward: reward_lipschitz(m), gamma })
}

//! Non-stationary Markov policies stored as flat `[h][s][a]` tables.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::{random_simplex, RENORM_THRESHOLD};
use crate::error::{MfError, Result};

const FINGERPRINT_GRID: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyDoc", into = "PolicyDoc")]
pub struct Policy {
    horizon: usize,
    states: usize,
    actions: usize,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolicyDoc {
    #[serde(rename = "H")]
    horizon: usize,
    #[serde(rename = "S")]
    states: usize,
    #[serde(rename = "A")]
    actions: usize,
    probs: Vec<f64>,
}

impl TryFrom<PolicyDoc> for Policy {
    type Error = MfError;
    fn try_from(d: PolicyDoc) -> Result<Self> {
        Policy::from_flat(d.horizon, d.states, d.actions, d.probs)
    }
}

impl From<Policy> for PolicyDoc {
    fn from(p: Policy) -> Self {
        PolicyDoc { horizon: p.horizon, states: p.states, actions: p.actions, probs: p.probs }
    }
}

/// Row-stochastic check with renormalization of rounding drift.
fn normalize_row(row: &mut [f64]) -> Result<()> {
    for p in row.iter_mut() {
        if !p.is_finite() || *p < -1e-12 {
            return Err(MfError::InvalidPolicy(format!("entry {p} is not a probability")));
        }
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    let mass: f64 = row.iter().sum();
    if (mass - 1.0).abs() > 1e-6 {
        return Err(MfError::InvalidPolicy(format!("row mass {mass}")));
    }
    if (mass - 1.0).abs() > RENORM_THRESHOLD {
        row.iter_mut().for_each(|p| *p /= mass);
    }
    Ok(())
}

impl Policy {
    pub fn from_flat(horizon: usize, states: usize, actions: usize, mut probs: Vec<f64>) -> Result<Self> {
        if horizon == 0 || states == 0 || actions == 0 {
            return Err(MfError::Dimension("policy shape must be nonzero".into()));
        }
        if probs.len() != horizon * states * actions {
            return Err(MfError::Dimension(format!(
                "expected {} entries, got {}",
                horizon * states * actions,
                probs.len()
            )));
        }
        for row in probs.chunks_mut(actions) {
            normalize_row(row)?;
        }
        Ok(Policy { horizon, states, actions, probs })
    }

    /// Build from nested `[h][s][a]` rows.
    pub fn from_rows(rows: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let horizon = rows.len();
        let states = rows.first().map_or(0, |r| r.len());
        let actions = rows.first().and_then(|r| r.first()).map_or(0, |r| r.len());
        let mut flat = Vec::with_capacity(horizon * states * actions);
        for step in &rows {
            if step.len() != states {
                return Err(MfError::Dimension("ragged policy steps".into()));
            }
            for row in step {
                if row.len() != actions {
                    return Err(MfError::Dimension("ragged policy rows".into()));
                }
                flat.extend_from_slice(row);
            }
        }
        Policy::from_flat(horizon, states, actions, flat)
    }

    pub fn uniform(horizon: usize, states: usize, actions: usize) -> Self {
        Policy { horizon, states, actions, probs: vec![1.0 / actions as f64; horizon * states * actions] }
    }

    /// Deterministic policy; `choice[h * states + s]` is the action taken.
    pub fn deterministic(horizon: usize, states: usize, actions: usize, choice: &[usize]) -> Self {
        assert_eq!(choice.len(), horizon * states);
        let mut probs = vec![0.0; horizon * states * actions];
        for (row, &a) in choice.iter().enumerate() {
            probs[row * actions + a] = 1.0;
        }
        Policy { horizon, states, actions, probs }
    }

    /// Every row an independent Dirichlet(1) draw.
    pub fn random<R: Rng + ?Sized>(horizon: usize, states: usize, actions: usize, rng: &mut R) -> Self {
        let mut probs = Vec::with_capacity(horizon * states * actions);
        for _ in 0..horizon * states {
            probs.extend(random_simplex(actions, rng));
        }
        Policy { horizon, states, actions, probs }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    #[inline]
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.probs[(h * self.states + s) * self.actions + a]
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let start = (h * self.states + s) * self.actions;
        &self.probs[start..start + self.actions]
    }

    /// The `S x A` block of step `h`, row-major.
    pub fn step(&self, h: usize) -> &[f64] {
        let len = self.states * self.actions;
        &self.probs[h * len..(h + 1) * len]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.probs
    }

    pub fn same_shape(&self, other: &Policy) -> bool {
        self.horizon == other.horizon && self.states == other.states && self.actions == other.actions
    }

    /// `(1 - lambda) * self + lambda * other`.
    pub fn mix(&self, other: &Policy, lambda: f64) -> Result<Policy> {
        if !self.same_shape(other) {
            return Err(MfError::Dimension("policy shapes differ".into()));
        }
        let mut probs: Vec<f64> =
            self.probs.iter().zip(&other.probs).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect();
        for row in probs.chunks_mut(self.actions) {
            normalize_row(row)?;
        }
        Ok(Policy { probs, ..*self })
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    /// SHA-256 over entries rounded to a 1e-12 grid, with the shape mixed in.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for dim in [self.horizon, self.states, self.actions] {
            h.update((dim as u64).to_le_bytes());
        }
        for &p in &self.probs {
            let q = (p / FINGERPRINT_GRID).round() as i64;
            h.update(q.to_le_bytes());
        }
        h.finalize().into()
    }

    /// Largest per-step Frobenius distance between two policies.
    pub fn sup_step_distance(&self, other: &Policy) -> f64 {
        (0..self.horizon)
            .map(|h| {
                self.step(h)
                    .iter()
                    .zip(other.step(h))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// All `A^(S*H)` deterministic policies, in lexicographic order of the choice vector.
pub struct DeterministicPolicies {
    horizon: usize,
    states: usize,
    actions: usize,
    next: Option<Vec<usize>>,
}

impl DeterministicPolicies {
    pub fn new(horizon: usize, states: usize, actions: usize) -> Self {
        DeterministicPolicies { horizon, states, actions, next: Some(vec![0; horizon * states]) }
    }

    /// `A^(S*H)`, saturating.
    pub fn count(horizon: usize, states: usize, actions: usize) -> u128 {
        let mut n: u128 = 1;
        for _ in 0..horizon * states {
            n = n.saturating_mul(actions as u128);
        }
        n
    }
}

impl Iterator for DeterministicPolicies {
    type Item = Policy;
    fn next(&mut self) -> Option<Policy> {
        let cur = self.next.take()?;
        let pol = Policy::deterministic(self.horizon, self.states, self.actions, &cur);
        let mut nxt = cur;
        let mut i = nxt.len();
        let mut done = true;
        while i > 0 {
            i -= 1;
            if nxt[i] + 1 < self.actions {
                nxt[i] += 1;
                done = false;
                break;
            }
            nxt[i] = 0;
        }
        if !done {
            self.next = Some(nxt);
        }
        Some(pol)
    }
}

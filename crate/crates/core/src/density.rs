//! Probability vectors over a finite state space and the two distances used
//! throughout the crate.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{MfError, Result};

/// Maximum deviation of raw mass from one that is treated as rounding.
pub const MASS_TOLERANCE: f64 = 1e-6;
/// Entries in `[-NEG_TOLERANCE, 0)` are clamped to zero on construction.
pub const NEG_TOLERANCE: f64 = 1e-12;
/// Mass deviations at or below this are left alone.
pub const RENORM_THRESHOLD: f64 = 1e-12;

/// A probability vector. Renormalized on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Density(Vec<f64>);

impl Density {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(MfError::InvalidDensity("empty probability vector".into()));
        }
        let mut probs = probs;
        for p in probs.iter_mut() {
            if !p.is_finite() || *p < -NEG_TOLERANCE {
                return Err(MfError::InvalidDensity(format!("entry {p} is not a probability")));
            }
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let mass: f64 = probs.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(MfError::InvalidDensity(format!("mass {mass} deviates from 1")));
        }
        // Skipping exact-enough inputs keeps construction idempotent, so
        // serialized densities round-trip bit for bit.
        if (mass - 1.0).abs() > RENORM_THRESHOLD {
            probs.iter_mut().for_each(|p| *p /= mass);
        }
        Ok(Density(probs))
    }

    pub fn dirac(len: usize, at: usize) -> Self {
        let mut v = vec![0.0; len];
        v[at] = 1.0;
        Density(v)
    }

    pub fn uniform(len: usize) -> Self {
        Density(vec![1.0 / len as f64; len])
    }

    /// Uniform draw from the simplex (Dirichlet with unit concentration).
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Density(random_simplex(len, rng))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for Density {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for Density {
    type Error = MfError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Density::new(v)
    }
}

impl From<Density> for Vec<f64> {
    fn from(d: Density) -> Self {
        d.0
    }
}

/// Dirichlet(1) sample as a plain vector.
pub fn random_simplex<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

/// The per-step population densities `μ_1 … μ_H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DensityFlow(Vec<Density>);

impl DensityFlow {
    pub fn new(flow: Vec<Density>, horizon: usize) -> Result<Self> {
        if flow.len() != horizon {
            return Err(MfError::Dimension(format!(
                "flow has {} steps, horizon is {horizon}",
                flow.len()
            )));
        }
        if let Some(first) = flow.first() {
            if flow.iter().any(|d| d.len() != first.len()) {
                return Err(MfError::Dimension("flow densities differ in length".into()));
            }
        }
        Ok(DensityFlow(flow))
    }

    pub fn horizon(&self) -> usize {
        self.0.len()
    }

    pub fn step(&self, h: usize) -> &Density {
        &self.0[h]
    }

    pub fn steps(&self) -> &[Density] {
        &self.0
    }
}

fn check_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(MfError::Dimension(format!("lengths {} and {}", p.len(), q.len())));
    }
    Ok(())
}

/// Total variation: half the L1 distance.
pub fn tv_distance(p: &Density, q: &Density) -> Result<f64> {
    tv_slices(p.probs(), q.probs())
}

pub fn tv_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    Ok(tv_unchecked(p, q))
}

#[inline]
pub(crate) fn tv_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let l1: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    (0.5 * l1).min(1.0)
}

/// `sqrt(1 - BC(p, q))` with `BC` the Bhattacharyya coefficient.
pub fn hellinger_distance(p: &Density, q: &Density) -> Result<f64> {
    hellinger_slices(p.probs(), q.probs())
}

pub fn hellinger_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    Ok(hellinger_unchecked(p, q))
}

#[inline]
pub(crate) fn hellinger_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let bc: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    (1.0 - bc).max(0.0).sqrt()
}

/// Hellinger distance between `N(m1, σ²I)` and `N(m2, σ²I)`:
/// `H² = 1 - exp(-|m1 - m2|² / (8σ²))`.
pub fn gaussian_hellinger(m1: &[f64], m2: &[f64], sigma: f64) -> Result<f64> {
    check_len(m1, m2)?;
    if !(sigma > 0.0) {
        return Err(MfError::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    Ok(gaussian_hellinger_unchecked(m1, m2, sigma))
}

#[inline]
pub(crate) fn gaussian_hellinger_unchecked(m1: &[f64], m2: &[f64], sigma: f64) -> f64 {
    let d2: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b) * (a - b)).sum();
    (1.0 - (-d2 / (8.0 * sigma * sigma)).exp()).max(0.0).sqrt()
}

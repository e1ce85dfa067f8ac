use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{density_flow, sample_in, ConditionedMdp};
use crate::error::{MfError, Result};
use crate::model::MeanFieldModel;
use crate::policy::Policy;

fn check_eps_delta(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(MfError::Parameter(format!("epsilon and delta must lie in (0, 1), got {epsilon}, {delta}")));
    }
    Ok(())
}

/// `ceil(log_{3/2}(1 / delta))`, at least one. Values within 1e-9 of an
/// integer are rounded first so that exact powers of 3/2 are not bumped up.
pub fn regret2pac_rounds(delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MfError::Parameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    let x = (1.0 / delta).ln() / 1.5f64.ln();
    let n = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() };
    Ok((n as usize).max(1))
}

/// `ceil(16 / eps² ln(2 N / delta))` trajectories per selected candidate.
pub fn regret2pac_trajectories(epsilon: f64, delta: f64) -> Result<usize> {
    check_eps_delta(epsilon, delta)?;
    let n = regret2pac_rounds(delta)? as f64;
    Ok((16.0 / (epsilon * epsilon) * (2.0 * n / delta).ln()).ceil() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regret2PacResult {
    pub policy: Policy,
    /// Index into the candidate list of the returned policy.
    pub chosen: usize,
    /// Candidate indices drawn, in order.
    pub picks: Vec<usize>,
    /// Empirical mean return per pick.
    pub estimates: Vec<f64>,
    pub trajectories: usize,
}

/// Draws `N` candidates uniformly with replacement, estimates each by the mean
/// on-policy return in `env`, and returns the empirical best (first on ties).
pub fn regret2pac<R: Rng + ?Sized>(
    candidates: &[Policy],
    env: &MeanFieldModel,
    epsilon: f64,
    delta: f64,
    rng: &mut R,
) -> Result<Regret2PacResult> {
    if candidates.is_empty() {
        return Err(MfError::Parameter("regret2pac needs at least one candidate".into()));
    }
    env.require_discrete()?;
    let rounds = regret2pac_rounds(delta)?;
    let per = regret2pac_trajectories(epsilon, delta)?;
    let picks: Vec<usize> = (0..rounds).map(|_| rng.random_range(0..candidates.len())).collect();
    let mut estimates = Vec::with_capacity(rounds);
    for &i in &picks {
        let pi = &candidates[i];
        let flow = density_flow(env, pi)?;
        let mdp = ConditionedMdp::new(env, &flow)?;
        let mut total = 0.0;
        for _ in 0..per {
            total += sample_in(&mdp, env.mu1(), pi, rng).iter().map(|s| s.r).sum::<f64>();
        }
        estimates.push(total / per as f64);
    }
    let best = crate::planning::argmax(&estimates);
    Ok(Regret2PacResult {
        policy: candidates[picks[best]].clone(),
        chosen: picks[best],
        picks,
        estimates,
        trajectories: rounds * per,
    })
}

//! Exact population dynamics, policy evaluation and trajectory sampling.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::Rng;

use crate::density::{Density, DensityFlow};
use crate::error::{MfError, Result};
use crate::model::MeanFieldModel;
use crate::policy::Policy;

/// Drift tolerated before renormalizing a propagated density.
const DRIFT_LIMIT: f64 = 1e-6;

fn check_policy(m: &MeanFieldModel, pi: &Policy) -> Result<()> {
    if pi.horizon() != m.horizon() || pi.states() != m.states() || pi.actions() != m.actions() {
        return Err(MfError::Dimension(format!(
            "policy shape ({}, {}, {}) vs model ({}, {}, {})",
            pi.horizon(),
            pi.states(),
            pi.actions(),
            m.horizon(),
            m.states(),
            m.actions()
        )));
    }
    Ok(())
}

fn check_flow(m: &MeanFieldModel, cond: &DensityFlow) -> Result<()> {
    if cond.horizon() != m.horizon() || cond.step(0).len() != m.states() {
        return Err(MfError::Dimension("conditioning flow does not match the model".into()));
    }
    Ok(())
}

fn finish_density(raw: Vec<f64>) -> Result<Density> {
    let mass: f64 = raw.iter().sum();
    if (mass - 1.0).abs() > DRIFT_LIMIT || raw.iter().any(|&p| p < -1e-12) {
        return Err(MfError::Numerical(format!("propagated mass {mass}")));
    }
    Density::new(raw)
}

/// One step of the population operator:
/// `mu'(s') = sum_{s,a} mu(s) pi_h(a|s) P_h(s'|s,a,mu)`.
pub fn density_propagate(m: &MeanFieldModel, h: usize, mu: &Density, pi: &Policy) -> Result<Density> {
    m.require_discrete()?;
    check_policy(m, pi)?;
    if h >= m.horizon() || mu.len() != m.states() {
        return Err(MfError::Index(format!("step {h} / density length {}", mu.len())));
    }
    finish_density(propagate_raw(m, h, mu.probs(), pi))
}

fn propagate_raw(m: &MeanFieldModel, h: usize, mu: &[f64], pi: &Policy) -> Vec<f64> {
    let n = m.states();
    let a_count = m.actions();
    let mut next = vec![0.0; n];
    let mut buf = vec![0.0; n];
    for (s, &ms) in mu.iter().enumerate() {
        if ms == 0.0 {
            continue;
        }
        for a in 0..a_count {
            let w = ms * pi.prob(h, s, a);
            if w == 0.0 {
                continue;
            }
            m.transition_into(h, s, a, mu, &mut buf);
            for (o, p) in next.iter_mut().zip(&buf) {
                *o += w * p;
            }
        }
    }
    next
}

/// `mu_1 = m.mu1`, `mu_{h+1} = Gamma(mu_h)` under `pi`.
pub fn density_flow(m: &MeanFieldModel, pi: &Policy) -> Result<DensityFlow> {
    m.require_discrete()?;
    check_policy(m, pi)?;
    let mut flow = Vec::with_capacity(m.horizon());
    flow.push(m.mu1().clone());
    for h in 0..m.horizon() - 1 {
        let next = finish_density(propagate_raw(m, h, flow[h].probs(), pi))?;
        flow.push(next);
    }
    DensityFlow::new(flow, m.horizon())
}

/// Thread-safe memo of density flows keyed by (model contents, policy fingerprint).
#[derive(Debug, Default)]
pub struct FlowCache {
    map: RwLock<HashMap<([u8; 32], [u8; 32]), Arc<DensityFlow>>>,
}

impl FlowCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, m: &MeanFieldModel, pi: &Policy) -> Result<Arc<DensityFlow>> {
        let key = (*m.fingerprint(), pi.fingerprint());
        if let Some(hit) = self.map.read().expect("flow cache poisoned").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let flow = Arc::new(density_flow(m, pi)?);
        let mut w = self.map.write().expect("flow cache poisoned");
        Ok(Arc::clone(w.entry(key).or_insert(flow)))
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("flow cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The single-agent MDP obtained by freezing the population flow: per-step
/// kernels `P_h[s][a][s']` and rewards `r_h[s][a]`.
#[derive(Debug, Clone)]
pub struct ConditionedMdp {
    states: usize,
    actions: usize,
    kernels: Vec<Vec<f64>>,
    rewards: Vec<Vec<f64>>,
}

impl ConditionedMdp {
    pub fn new(m: &MeanFieldModel, cond: &DensityFlow) -> Result<Self> {
        m.require_discrete()?;
        check_flow(m, cond)?;
        let kernels = (0..m.horizon()).map(|h| m.step_kernel(h, cond.step(h).probs())).collect();
        let rewards = (0..m.horizon()).map(|h| m.step_reward(h, cond.step(h).probs())).collect();
        Ok(ConditionedMdp { states: m.states(), actions: m.actions(), kernels, rewards })
    }

    pub fn horizon(&self) -> usize {
        self.kernels.len()
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    #[inline]
    pub fn kernel(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let row = s * self.actions + a;
        &self.kernels[h][row * self.states..(row + 1) * self.states]
    }

    #[inline]
    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[h][s * self.actions + a]
    }

    /// `Q_h(s, a) = r_h(s, a) + <P_h(.|s, a), next_v>`, flat S*A.
    pub fn q_step(&self, h: usize, next_v: &[f64]) -> Vec<f64> {
        let mut q = self.rewards[h].clone();
        for (row, qv) in q.iter_mut().enumerate() {
            let k = &self.kernels[h][row * self.states..(row + 1) * self.states];
            *qv += k.iter().zip(next_v).map(|(p, v)| p * v).sum::<f64>();
        }
        q
    }

    /// Backward induction for a fixed policy; returns `(V, Q)` per step.
    pub fn evaluate(&self, pi: &Policy) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let horizon = self.horizon();
        let mut values = vec![vec![0.0; self.states]; horizon + 1];
        let mut qs = vec![Vec::new(); horizon];
        for h in (0..horizon).rev() {
            let q = self.q_step(h, &values[h + 1]);
            for s in 0..self.states {
                values[h][s] = pi
                    .row(h, s)
                    .iter()
                    .zip(&q[s * self.actions..(s + 1) * self.actions])
                    .map(|(p, qv)| p * qv)
                    .sum();
            }
            qs[h] = q;
        }
        values.pop();
        (values, qs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValue {
    /// `J = <mu_1, V_1>`.
    pub j: f64,
    /// `V_h(s)` for every step.
    pub v: Vec<Vec<f64>>,
}

/// Value of `pi` in `m` with the population frozen at `cond`.
pub fn policy_value(pi: &Policy, m: &MeanFieldModel, cond: &DensityFlow) -> Result<PolicyValue> {
    check_policy(m, pi)?;
    let mdp = ConditionedMdp::new(m, cond)?;
    Ok(value_in(&mdp, m.mu1(), pi))
}

pub(crate) fn value_in(mdp: &ConditionedMdp, mu1: &Density, pi: &Policy) -> PolicyValue {
    let (v, _) = mdp.evaluate(pi);
    let j = mu1.probs().iter().zip(&v[0]).map(|(m, x)| m * x).sum();
    PolicyValue { j, v }
}

/// `J_M(pi) = J_M(pi; mu^pi_M)`.
pub fn on_policy_value(m: &MeanFieldModel, pi: &Policy) -> Result<f64> {
    let flow = density_flow(m, pi)?;
    Ok(policy_value(pi, m, &flow)?.j)
}

/// State-action occupancies `d_h(s, a)` of `behavior` with the population frozen at `cond`; flat S*A per step.
pub fn occupancy_flow(behavior: &Policy, m: &MeanFieldModel, cond: &DensityFlow) -> Result<Vec<Vec<f64>>> {
    check_policy(m, behavior)?;
    let mdp = ConditionedMdp::new(m, cond)?;
    Ok(occupancy_in(&mdp, m.mu1(), behavior))
}

pub(crate) fn occupancy_in(mdp: &ConditionedMdp, mu1: &Density, behavior: &Policy) -> Vec<Vec<f64>> {
    let n = mdp.states();
    let na = mdp.actions();
    let mut out = Vec::with_capacity(mdp.horizon());
    let mut state = mu1.probs().to_vec();
    for h in 0..mdp.horizon() {
        let mut d = vec![0.0; n * na];
        for s in 0..n {
            for a in 0..na {
                d[s * na + a] = state[s] * behavior.prob(h, s, a);
            }
        }
        if h + 1 < mdp.horizon() {
            let mut next = vec![0.0; n];
            for s in 0..n {
                for a in 0..na {
                    let w = d[s * na + a];
                    if w == 0.0 {
                        continue;
                    }
                    for (o, p) in next.iter_mut().zip(mdp.kernel(h, s, a)) {
                        *o += w * p;
                    }
                }
            }
            state = next;
        }
        out.push(d);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// Inverse-CDF categorical draw; never returns a zero-probability index.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// One representative-agent trajectory: the agent follows `behavior` while the
/// population follows `population` in model `m`.
pub fn sample_trajectory<R: Rng + ?Sized>(
    behavior: &Policy,
    population: &Policy,
    m: &MeanFieldModel,
    rng: &mut R,
) -> Result<Vec<Step>> {
    check_policy(m, behavior)?;
    let flow = density_flow(m, population)?;
    let mdp = ConditionedMdp::new(m, &flow)?;
    Ok(sample_in(&mdp, m.mu1(), behavior, rng))
}

/// Trajectory in an already-conditioned MDP.
pub fn sample_in<R: Rng + ?Sized>(mdp: &ConditionedMdp, mu1: &Density, behavior: &Policy, rng: &mut R) -> Vec<Step> {
    let mut s = sample_categorical(mu1.probs(), rng);
    let mut out = Vec::with_capacity(mdp.horizon());
    for h in 0..mdp.horizon() {
        let a = sample_categorical(behavior.row(h, s), rng);
        let s_next = sample_categorical(mdp.kernel(h, s, a), rng);
        out.push(Step { s, a, r: mdp.reward(h, s, a), s_next });
        s = s_next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RewardFamily, TransitionFamily};

    fn swap_model(horizon: usize) -> MeanFieldModel {
        let table = [0.0, 1.0, 1.0, 0.0].repeat(horizon);
        MeanFieldModel::new(
            "swap",
            2,
            1,
            horizon,
            Density::dirac(2, 0),
            TransitionFamily::DensityFree { table },
            RewardFamily::zero(horizon, 2, 1),
        )
        .unwrap()
    }

    #[test]
    fn swap_chain_flow() {
        let m = swap_model(3);
        let pi = Policy::uniform(3, 2, 1);
        let flow = density_flow(&m, &pi).unwrap();
        let expect = [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        for (h, e) in expect.iter().enumerate() {
            assert_eq!(flow.step(h).probs(), e);
        }
        let one = density_flow(&swap_model(1), &Policy::uniform(1, 2, 1)).unwrap();
        assert_eq!(one.horizon(), 1);
        assert_eq!(one.step(0), &Density::dirac(2, 0));
    }

    #[test]
    fn per_action_diracs_split_mass() {
        // P(.|0,a0) = [1,0], P(.|0,a1) = [0,1]; state 1 loops.
        let table = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let m = MeanFieldModel::new(
            "split",
            2,
            2,
            1,
            Density::dirac(2, 0),
            TransitionFamily::DensityFree { table },
            RewardFamily::zero(1, 2, 2),
        )
        .unwrap();
        let next = density_propagate(&m, 0, &Density::dirac(2, 0), &Policy::uniform(1, 2, 2)).unwrap();
        assert_eq!(next.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn constant_reward_values() {
        let horizon = 3;
        let m = swap_model(horizon);
        let pi = Policy::uniform(horizon, 2, 1);
        let flow = density_flow(&m, &pi).unwrap();
        assert_eq!(policy_value(&pi, &m, &flow).unwrap().j, 0.0);

        let full = MeanFieldModel::new(
            "full",
            2,
            1,
            horizon,
            Density::dirac(2, 0),
            m.transition().clone(),
            RewardFamily::constant(vec![1.0 / 3.0; 6], 2),
        )
        .unwrap();
        let j = policy_value(&pi, &full, &flow).unwrap().j;
        assert!((j - 1.0).abs() < 1e-15);
    }

    #[test]
    fn deterministic_trajectory_alternates() {
        let m = swap_model(4);
        let pi = Policy::uniform(4, 2, 1);
        let mut rng = crate::seeding::stream(1, crate::seeding::Stream::Trajectory);
        let traj = sample_trajectory(&pi, &pi, &m, &mut rng).unwrap();
        let states: Vec<usize> = traj.iter().map(|t| t.s).collect();
        assert_eq!(states, vec![0, 1, 0, 1]);
        assert!(traj.iter().all(|t| t.s_next == 1 - t.s));
    }

    #[test]
    fn occupancy_horizon_one_is_product() {
        let m = swap_model(1);
        let pi = Policy::uniform(1, 2, 1);
        let flow = density_flow(&m, &pi).unwrap();
        let occ = occupancy_flow(&pi, &m, &flow).unwrap();
        assert_eq!(occ, vec![vec![1.0, 0.0]]);
    }

    #[test]
    fn cache_reuses_flows() {
        let m = swap_model(3);
        let pi = Policy::uniform(3, 2, 1);
        let cache = FlowCache::new();
        let a = cache.get(&m, &pi).unwrap();
        let b = cache.get(&m, &pi).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.len(), 1);
    }
}

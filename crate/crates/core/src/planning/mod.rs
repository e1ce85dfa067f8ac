//! Planning against a known model: best responses, exploitability, the
//! mean-field control planner and the Nash-equilibrium solver.

mod checks;
mod ne;

pub use checks::{bound_check_suite, contraction_certificate, BoundCheck, BoundCheckReport, CheckStatus};
pub use ne::{gamma_pp_step, ne_operator, ne_solve, NeParams, NeSolveResult};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{Density, DensityFlow};
use crate::dynamics::{density_flow, on_policy_value, value_in, ConditionedMdp};
use crate::error::{MfError, Result};
use crate::model::MeanFieldModel;
use crate::policy::{DeterministicPolicies, Policy};

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponseResult {
    pub policy: Policy,
    pub value: f64,
    /// Optimal `Q_h(s, a)`, flat S*A per step.
    pub q: Vec<Vec<f64>>,
}

/// Index of the largest entry, ties to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn best_response_in(mdp: &ConditionedMdp, mu1: &Density) -> BestResponseResult {
    let (n, na, horizon) = (mdp.states(), mdp.actions(), mdp.horizon());
    let mut v = vec![0.0; n];
    let mut qs = vec![Vec::new(); horizon];
    let mut choice = vec![0; horizon * n];
    for h in (0..horizon).rev() {
        let q = mdp.q_step(h, &v);
        for s in 0..n {
            let a = argmax(&q[s * na..(s + 1) * na]);
            choice[h * n + s] = a;
            v[s] = q[s * na + a];
        }
        qs[h] = q;
    }
    let value = mu1.probs().iter().zip(&v).map(|(m, x)| m * x).sum();
    BestResponseResult { policy: Policy::deterministic(horizon, n, na, &choice), value, q: qs }
}

/// Optimal single-agent response with the population frozen at `cond`.
pub fn best_response(m: &MeanFieldModel, cond: &DensityFlow) -> Result<BestResponseResult> {
    let mdp = ConditionedMdp::new(m, cond)?;
    Ok(best_response_in(&mdp, m.mu1()))
}

/// `J_M(pi_tilde; mu^pi) - J_M(pi; mu^pi)`.
pub fn delta_gap(m: &MeanFieldModel, pi_tilde: &Policy, pi: &Policy) -> Result<f64> {
    if !pi_tilde.same_shape(pi) {
        return Err(MfError::Dimension("policy shapes differ".into()));
    }
    let flow = density_flow(m, pi)?;
    let mdp = ConditionedMdp::new(m, &flow)?;
    Ok(value_in(&mdp, m.mu1(), pi_tilde).j - value_in(&mdp, m.mu1(), pi).j)
}

/// Gain of the best deviation against the population flow of `pi`.
pub fn exploitability(m: &MeanFieldModel, pi: &Policy) -> Result<f64> {
    let flow = density_flow(m, pi)?;
    let mdp = ConditionedMdp::new(m, &flow)?;
    Ok(exploitability_in(&mdp, m.mu1(), pi))
}

pub(crate) fn exploitability_in(mdp: &ConditionedMdp, mu1: &Density, pi: &Policy) -> f64 {
    best_response_in(mdp, mu1).value - value_in(mdp, mu1, pi).j
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - tau).max(0.0)).collect();
    let mass: f64 = out.iter().sum();
    if mass > 0.0 && mass != 1.0 {
        out.iter_mut().for_each(|x| *x /= mass);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerBudget {
    pub restarts: usize,
    pub max_iters: usize,
    /// Enumerate deterministic policies when `A^(S*H)` does not exceed this.
    pub exhaustive_cap: u64,
    pub damping: f64,
}

impl Default for PlannerBudget {
    fn default() -> Self {
        PlannerBudget { restarts: 8, max_iters: 200, exhaustive_cap: 4096, damping: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMethod {
    Exhaustive,
    LocalAscent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfcPlan {
    pub policy: Policy,
    pub value: f64,
    pub method: PlanMethod,
}

/// Best deterministic policy by enumeration; ties keep the first in
/// lexicographic order.
pub fn exhaustive_mfc(m: &MeanFieldModel) -> Result<(Policy, f64)> {
    let mut best: Option<(Policy, f64)> = None;
    for pi in DeterministicPolicies::new(m.horizon(), m.states(), m.actions()) {
        let j = on_policy_value(m, &pi)?;
        if best.as_ref().is_none_or(|(_, b)| j > *b) {
            best = Some((pi, j));
        }
    }
    Ok(best.expect("at least one deterministic policy"))
}

/// Maximizes `J_M(pi)` (population following `pi`). Exact over deterministic
/// policies when enumeration fits the budget, otherwise multi-start local ascent.
pub fn mfc_plan<R: Rng + ?Sized>(m: &MeanFieldModel, budget: &PlannerBudget, rng: &mut R) -> Result<MfcPlan> {
    m.require_discrete()?;
    let count = DeterministicPolicies::count(m.horizon(), m.states(), m.actions());
    if count <= budget.exhaustive_cap as u128 {
        let (policy, value) = exhaustive_mfc(m)?;
        return Ok(MfcPlan { policy, value, method: PlanMethod::Exhaustive });
    }
    let (policy, value) = local_ascent(m, budget, rng)?;
    Ok(MfcPlan { policy, value, method: PlanMethod::LocalAscent })
}

/// Alternates damped best-response mixing with single-row deterministic
/// moves, restarting from uniform and then random policies.
pub fn local_ascent<R: Rng + ?Sized>(m: &MeanFieldModel, budget: &PlannerBudget, rng: &mut R) -> Result<(Policy, f64)> {
    let (n, na, horizon) = (m.states(), m.actions(), m.horizon());
    let mut best: Option<(Policy, f64)> = None;
    for restart in 0..budget.restarts.max(1) {
        let mut pi = if restart == 0 { Policy::uniform(horizon, n, na) } else { Policy::random(horizon, n, na, rng) };
        let mut j = on_policy_value(m, &pi)?;
        for _ in 0..budget.max_iters {
            let mut improved = false;
            let flow = density_flow(m, &pi)?;
            let br = best_response(m, &flow)?.policy;
            let mixed = pi.mix(&br, budget.damping)?;
            let jm = on_policy_value(m, &mixed)?;
            if jm > j + 1e-15 {
                pi = mixed;
                j = jm;
                improved = true;
            }
            for row in 0..horizon * n {
                let (h, s) = (row / n, row % n);
                for a in 0..na {
                    let mut flat = pi.as_flat().to_vec();
                    let start = (h * n + s) * na;
                    flat[start..start + na].iter_mut().enumerate().for_each(|(b, p)| *p = if a == b { 1.0 } else { 0.0 });
                    let cand = Policy::from_flat(horizon, n, na, flat)?;
                    let jc = on_policy_value(m, &cand)?;
                    if jc > j + 1e-15 {
                        pi = cand;
                        j = jc;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        if best.as_ref().is_none_or(|(_, b)| j > *b) {
            best = Some((pi, j));
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::policy_value;
    use crate::model::{RewardFamily, TransitionFamily};

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[1.0, 0.5]), vec![0.75, 0.25]);
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[5.0, 0.0]), vec![1.0, 0.0]);
        let tie = project_simplex(&[0.0, 0.0, 0.0]);
        assert!(tie.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    fn action_reward_model(n: usize, na: usize) -> MeanFieldModel {
        let horizon = 1;
        let table = Density::uniform(n).into_inner().repeat(n * na);
        let r0 = (0..n * na).map(|i| (i % na) as f64 / (na as f64 * horizon as f64)).collect();
        MeanFieldModel::new(
            "ar",
            n,
            na,
            horizon,
            Density::uniform(n),
            TransitionFamily::DensityFree { table },
            RewardFamily::constant(r0, n),
        )
        .unwrap()
    }

    #[test]
    fn greedy_picks_highest_action() {
        let m = action_reward_model(2, 4);
        let flow = density_flow(&m, &Policy::uniform(1, 2, 4)).unwrap();
        let br = best_response(&m, &flow).unwrap();
        assert!((br.value - 0.75).abs() < 1e-15);
        assert_eq!(br.policy.row(0, 1), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_reward_ties_to_action_zero() {
        let n = 2;
        let m = MeanFieldModel::new(
            "z",
            n,
            3,
            2,
            Density::uniform(n),
            TransitionFamily::DensityFree { table: vec![0.5; 2 * n * 3 * n] },
            RewardFamily::zero(2, n, 3),
        )
        .unwrap();
        let flow = density_flow(&m, &Policy::uniform(2, n, 3)).unwrap();
        let br = best_response(&m, &flow).unwrap();
        assert_eq!(br.value, 0.0);
        assert!((0..2).all(|h| (0..n).all(|s| br.policy.row(h, s)[0] == 1.0)));
    }

    #[test]
    fn gap_identities() {
        let m = action_reward_model(2, 3);
        let pi = Policy::uniform(1, 2, 3);
        assert_eq!(delta_gap(&m, &pi, &pi).unwrap(), 0.0);
        let flow = density_flow(&m, &pi).unwrap();
        let br = best_response(&m, &flow).unwrap();
        let e = exploitability(&m, &pi).unwrap();
        assert_eq!(delta_gap(&m, &br.policy, &pi).unwrap(), e);
        assert_eq!(delta_gap(&m, &br.policy, &pi).unwrap(), delta_gap(&m, &br.policy, &pi).unwrap());
        let j = policy_value(&pi, &m, &flow).unwrap().j;
        assert!((e - (br.value - j)).abs() < 1e-15);
    }

    #[test]
    fn full_reward_plans_to_one() {
        let n = 2;
        let horizon = 2;
        let m = MeanFieldModel::new(
            "full",
            n,
            2,
            horizon,
            Density::uniform(n),
            TransitionFamily::DensityFree { table: vec![0.5; horizon * n * 2 * n] },
            RewardFamily::constant(vec![0.5; horizon * n * 2], n),
        )
        .unwrap();
        let mut rng = crate::seeding::stream(0, crate::seeding::Stream::PlannerRestarts);
        let plan = mfc_plan(&m, &PlannerBudget::default(), &mut rng).unwrap();
        assert_eq!(plan.method, PlanMethod::Exhaustive);
        assert!((plan.value - 1.0).abs() < 1e-15);
        let budget = PlannerBudget { exhaustive_cap: 0, ..PlannerBudget::default() };
        let plan = mfc_plan(&m, &budget, &mut rng).unwrap();
        assert_eq!(plan.method, PlanMethod::LocalAscent);
        assert!((plan.value - 1.0).abs() < 1e-15);
    }
}

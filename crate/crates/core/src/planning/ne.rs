//! Nash equilibria as fixed points of `Gamma_NE(pi) = Gamma_pp(pi, Gamma_pop(pi))`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{best_response_in, exploitability_in, project_simplex};
use crate::density::{tv_unchecked, DensityFlow};
use crate::dynamics::{density_flow, density_propagate, ConditionedMdp};
use crate::error::{MfError, Result};
use crate::model::MeanFieldModel;
use crate::policy::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeParams {
    /// Mixing weight `lambda` in `pi <- (1 - lambda) pi + lambda Gamma_NE(pi)`.
    pub damping: f64,
    pub max_iters: usize,
    /// Convergence threshold on `sup_h |pi_h - Gamma_NE(pi)_h|_F`.
    pub tolerance: f64,
    pub restarts: usize,
    /// Weight `eta` of the proximal term `eta |pi - u|^2`.
    pub proximal_weight: f64,
}

impl Default for NeParams {
    fn default() -> Self {
        NeParams { damping: 0.5, max_iters: 2000, tolerance: 1e-10, restarts: 4, proximal_weight: 1.0 }
    }
}

impl NeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(MfError::Parameter(format!("damping {} outside (0, 1]", self.damping)));
        }
        if !(self.tolerance > 0.0) || !(self.proximal_weight > 0.0) {
            return Err(MfError::Parameter("tolerance and proximal_weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeSolveResult {
    pub policy: Policy,
    pub flow: DensityFlow,
    /// Exact, from a fresh best response against `flow`.
    pub exploitability: f64,
    /// `max_h |mu_{h+1} - Gamma_pop(mu_h)|_1` for the returned pair.
    pub consistency_residual: f64,
    /// `sup_h |pi_h - Gamma_NE(pi)_h|_F` at the returned policy.
    pub fixed_point_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts: usize,
}

/// Proximal best-response update against `cond`: per `(h, s)`,
/// `argmax_u <Q^pi_h(s, .), u> - eta |pi_h(.|s) - u|^2` over the simplex,
/// i.e. the projection of `pi_h(.|s) + Q^pi_h(s, .) / (2 eta)`.
pub fn gamma_pp_step(m: &MeanFieldModel, pi: &Policy, cond: &DensityFlow, proximal_weight: f64) -> Result<Policy> {
    let mdp = ConditionedMdp::new(m, cond)?;
    Ok(gamma_pp_in(&mdp, pi, proximal_weight))
}

fn gamma_pp_in(mdp: &ConditionedMdp, pi: &Policy, eta: f64) -> Policy {
    let (n, na, horizon) = (mdp.states(), mdp.actions(), mdp.horizon());
    let (_, qs) = mdp.evaluate(pi);
    let mut flat = Vec::with_capacity(horizon * n * na);
    let mut shifted = vec![0.0; na];
    for (h, q) in qs.iter().enumerate() {
        for s in 0..n {
            for (a, x) in shifted.iter_mut().enumerate() {
                *x = pi.prob(h, s, a) + q[s * na + a] / (2.0 * eta);
            }
            flat.extend(project_simplex(&shifted));
        }
    }
    Policy::from_flat(horizon, n, na, flat).expect("projection yields simplex rows")
}

/// `Gamma_NE(pi)`: proximal step against the population flow of `pi` itself.
pub fn ne_operator(m: &MeanFieldModel, pi: &Policy, proximal_weight: f64) -> Result<Policy> {
    let flow = density_flow(m, pi)?;
    gamma_pp_step(m, pi, &flow, proximal_weight)
}

fn consistency(m: &MeanFieldModel, pi: &Policy, flow: &DensityFlow) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for h in 0..m.horizon() - 1 {
        let next = density_propagate(m, h, flow.step(h), pi)?;
        worst = worst.max(2.0 * tv_unchecked(next.probs(), flow.step(h + 1).probs()));
    }
    Ok(worst)
}

struct Run {
    policy: Policy,
    residual: f64,
    iterations: usize,
}

fn iterate(m: &MeanFieldModel, start: Policy, params: &NeParams) -> Result<Run> {
    let mut pi = start;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < params.max_iters {
        let target = ne_operator(m, &pi, params.proximal_weight)?;
        residual = pi.sup_step_distance(&target);
        if residual <= params.tolerance {
            return Ok(Run { policy: pi, residual, iterations });
        }
        pi = pi.mix(&target, params.damping)?;
        iterations += 1;
    }
    let target = ne_operator(m, &pi, params.proximal_weight)?;
    residual = residual.min(pi.sup_step_distance(&target));
    Ok(Run { policy: pi, residual, iterations })
}

/// Damped fixed-point iteration from `restarts` starts: the uniform policy,
/// the best response to the uniform policy's flow, then random policies.
/// The second start is an exact fixed point when neither dynamics nor reward
/// depend on the population, where the damped iteration alone crawls
/// through near-ties in `Q`.
///
/// Among converged runs the lowest exploitability wins; if none converged,
/// the lowest-exploitability incumbent is returned with `converged = false`.
pub fn ne_solve<R: Rng + ?Sized>(m: &MeanFieldModel, params: &NeParams, rng: &mut R) -> Result<NeSolveResult> {
    m.require_discrete()?;
    params.validate()?;
    let (n, na, horizon) = (m.states(), m.actions(), m.horizon());
    let mut best: Option<(bool, f64, Run)> = None;
    let restarts = params.restarts.max(1);
    for r in 0..restarts {
        let start = match r {
            0 => Policy::uniform(horizon, n, na),
            1 => {
                let flow = density_flow(m, &Policy::uniform(horizon, n, na))?;
                best_response_in(&ConditionedMdp::new(m, &flow)?, m.mu1()).policy
            }
            _ => Policy::random(horizon, n, na, rng),
        };
        let run = iterate(m, start, params)?;
        let converged = run.residual <= params.tolerance;
        let flow = density_flow(m, &run.policy)?;
        let mdp = ConditionedMdp::new(m, &flow)?;
        let expl = exploitability_in(&mdp, m.mu1(), &run.policy);
        let better = match &best {
            None => true,
            Some((bc, be, _)) => (converged && !bc) || (converged == *bc && expl < *be),
        };
        if better {
            best = Some((converged, expl, run));
        }
    }
    let (converged, exploitability, run) = best.expect("at least one restart");
    let flow = density_flow(m, &run.policy)?;
    let consistency_residual = consistency(m, &run.policy, &flow)?;
    Ok(NeSolveResult {
        policy: run.policy,
        flow,
        exploitability,
        consistency_residual,
        fixed_point_residual: run.residual,
        iterations: run.iterations,
        converged,
        restarts,
    })
}

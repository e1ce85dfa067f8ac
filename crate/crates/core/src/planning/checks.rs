//! Exact evaluation of the model-difference and value-difference inequalities
//! between two models sharing shapes and reward.
//!
//! Notation in the comments: `d^{pi,M}` is the on-policy occupancy of `pi`
//! in `M`; `cross_h(s, a) = TV(P_h(.|s,a,mu^pi_M), P~_h(.|s,a,mu^pi_M~))`
//! compares the two models at their own flows and
//! `shared_h(s, a) = TV(P_h(.|s,a,mu^pi_M), P~_h(.|s,a,mu^pi_M))` at the flow of `M`.

use serde::{Deserialize, Serialize};

use crate::density::tv_unchecked;
use crate::dynamics::{density_flow, occupancy_in, value_in, ConditionedMdp};
use crate::error::{MfError, Result};
use crate::lipschitz::{certified_gamma_bound, reward_lipschitz, transition_lipschitz};
use crate::model::MeanFieldModel;
use crate::policy::Policy;

pub const CHECK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`; for per-step families of inequalities, the smallest one.
    pub slack: f64,
    pub status: CheckStatus,
}

impl BoundCheck {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        let slack = rhs - lhs;
        let status = if slack >= -CHECK_TOLERANCE { CheckStatus::Pass } else { CheckStatus::Fail };
        BoundCheck { name: name.to_string(), lhs, rhs, slack, status }
    }

    fn skipped(name: &str) -> Self {
        BoundCheck { name: name.to_string(), lhs: f64::NAN, rhs: f64::NAN, slack: f64::NAN, status: CheckStatus::Skipped }
    }

    /// Worst case over a family of `(lhs, rhs)` pairs.
    fn worst(name: &str, pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut out: Option<BoundCheck> = None;
        for (l, r) in pairs {
            let c = BoundCheck::new(name, l, r);
            if out.as_ref().is_none_or(|o| c.slack < o.slack) {
                out = Some(c);
            }
        }
        out.unwrap_or_else(|| BoundCheck::new(name, 0.0, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub transition_lipschitz: f64,
    pub reward_lipschitz: f64,
    pub gamma_certificate: Option<f64>,
    pub checks: Vec<BoundCheck>,
}

impl BoundCheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Certified population-operator constant for the pair, if it is below one.
pub fn contraction_certificate(m: &MeanFieldModel, m_tilde: &MeanFieldModel) -> Result<Option<f64>> {
    let g = certified_gamma_bound(m)?.max(certified_gamma_bound(m_tilde)?);
    Ok((g < 1.0).then_some(g))
}

/// `E_{d}[sum_h f_h]`, both as per-step S*A tables.
fn expect(occ: &[Vec<f64>], f: &[Vec<f64>]) -> Vec<f64> {
    occ.iter().zip(f).map(|(d, g)| d.iter().zip(g).map(|(a, b)| a * b).sum()).collect()
}

fn tv_table(a: &ConditionedMdp, b: &ConditionedMdp, h: usize) -> Vec<f64> {
    let (n, na) = (a.states(), a.actions());
    let mut out = Vec::with_capacity(n * na);
    for s in 0..n {
        for act in 0..na {
            out.push(tv_unchecked(a.kernel(h, s, act), b.kernel(h, s, act)));
        }
    }
    out
}

/// Evaluates both sides of each inequality. `gamma_certificate`, when given
/// and below one, enables the contraction-based conversion check; the
/// transition constant used is the larger of the two models'.
pub fn bound_check_suite(
    m: &MeanFieldModel,
    m_tilde: &MeanFieldModel,
    pi: &Policy,
    pi_tilde: &Policy,
    gamma_certificate: Option<f64>,
) -> Result<BoundCheckReport> {
    if !m.same_shape(m_tilde) || m.reward() != m_tilde.reward() || m.mu1() != m_tilde.mu1() {
        return Err(MfError::Precondition("models must share shapes, mu1 and reward".into()));
    }
    let horizon = m.horizon();
    let hf = horizon as f64;
    let lt = transition_lipschitz(m)?.max(transition_lipschitz(m_tilde)?);
    let lr = reward_lipschitz(m);

    let flow_m = density_flow(m, pi)?;
    let flow_t = density_flow(m_tilde, pi)?;
    let own_m = ConditionedMdp::new(m, &flow_m)?;
    let own_t = ConditionedMdp::new(m_tilde, &flow_t)?;
    let tilde_at_m = ConditionedMdp::new(m_tilde, &flow_m)?;

    let cross: Vec<Vec<f64>> = (0..horizon).map(|h| tv_table(&own_m, &own_t, h)).collect();
    let shared: Vec<Vec<f64>> = (0..horizon).map(|h| tv_table(&own_m, &tilde_at_m, h)).collect();
    let occ_pi = occupancy_in(&own_m, m.mu1(), pi);
    let occ_dev = occupancy_in(&own_m, m.mu1(), pi_tilde);

    let cross_pi = expect(&occ_pi, &cross);
    let shared_pi = expect(&occ_pi, &shared);
    let cross_dev = expect(&occ_dev, &cross);
    let sum_cross: f64 = cross_pi.iter().sum();
    let sum_shared: f64 = shared_pi.iter().sum();
    let sum_cross_dev: f64 = cross_dev.iter().sum();

    let mut checks = Vec::new();

    // |J_M(pi) - J_M~(pi)| <= (1 + L_r H) E_{pi,M}[sum cross].
    let j_m = value_in(&own_m, m.mu1(), pi).j;
    let j_t = value_in(&own_t, m.mu1(), pi).j;
    checks.push(BoundCheck::new("value_difference_control", (j_m - j_t).abs(), (1.0 + lr * hf) * sum_cross));

    // |Delta_M(pi~, pi) - Delta_M~(pi~, pi)|
    //   <= E_{pi~,M|mu^pi_M}[sum cross] + (2 L_r H + 1) E_{pi,M}[sum cross].
    let delta_m = value_in(&own_m, m.mu1(), pi_tilde).j - j_m;
    let delta_t = value_in(&own_t, m.mu1(), pi_tilde).j - j_t;
    checks.push(BoundCheck::new(
        "value_difference_game",
        (delta_m - delta_t).abs(),
        sum_cross_dev + (2.0 * lr * hf + 1.0) * sum_cross,
    ));

    // E[sum shared] <= (1 + L_T H) E[sum cross].
    checks.push(BoundCheck::new("shared_to_own_density", sum_shared, (1.0 + lt * hf) * sum_cross));

    // E[sum cross] <= E[sum_h (1 + L_T)^(H-h) shared_h]  (h 1-based).
    let weighted: f64 = shared_pi.iter().enumerate().map(|(h, x)| (1.0 + lt).powi((horizon - 1 - h) as i32) * x).sum();
    checks.push(BoundCheck::new("own_to_shared_density", sum_cross, weighted));

    // TV(mu_{M,h+1}, mu_{M~,h+1}) <= E[sum_{h' <= h} cross_h'].
    let gaps: Vec<f64> =
        (1..horizon).map(|h| tv_unchecked(flow_m.step(h).probs(), flow_t.step(h).probs())).collect();
    checks.push(BoundCheck::worst(
        "density_error_own",
        gaps.iter().enumerate().map(|(i, &g)| (g, cross_pi[..=i].iter().sum::<f64>())),
    ));

    // TV(mu_{M,h+1}, mu_{M~,h+1}) <= E[sum_{h' <= h} (1 + L_T)^(h-h') shared_h'].
    checks.push(BoundCheck::worst(
        "density_error_shared",
        gaps.iter().enumerate().map(|(i, &g)| {
            let rhs = (0..=i).map(|j| (1.0 + lt).powi((i - j) as i32) * shared_pi[j]).sum::<f64>();
            (g, rhs)
        }),
    ));

    // E[sum cross] <= (1 + L_T / (1 - L_Gamma)) E[sum shared].
    let gamma = gamma_certificate.filter(|g| *g < 1.0);
    match gamma {
        Some(g) => checks.push(BoundCheck::new("own_to_shared_contraction", sum_cross, (1.0 + lt / (1.0 - g)) * sum_shared)),
        None => checks.push(BoundCheck::skipped("own_to_shared_contraction")),
    }

    Ok(BoundCheckReport { transition_lipschitz: lt, reward_lipschitz: lr, gamma_certificate: gamma, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::{generate_class, ClassGenSpec, FamilyKind};

    #[test]
    fn identical_models_have_zero_lhs() {
        let spec = ClassGenSpec::new(3, 2, 3, 1, FamilyKind::ConvexMixture, 5);
        let c = generate_class(&spec).unwrap();
        let m = c.truth();
        let pi = Policy::uniform(3, 3, 2);
        let report = bound_check_suite(m, m, &pi, &pi, None).unwrap();
        for chk in &report.checks {
            if chk.status == CheckStatus::Skipped {
                continue;
            }
            assert_eq!(chk.lhs, 0.0, "{}", chk.name);
            assert_eq!(chk.status, CheckStatus::Pass);
        }
        assert_eq!(report.get("own_to_shared_contraction").unwrap().status, CheckStatus::Skipped);
    }

    #[test]
    fn density_free_pair_sides_coincide() {
        let spec = ClassGenSpec::new(3, 2, 3, 2, FamilyKind::DensityFree, 6);
        let c = generate_class(&spec).unwrap();
        let pi = Policy::uniform(3, 3, 2);
        let r = bound_check_suite(&c.models()[0], &c.models()[1], &pi, &pi, None).unwrap();
        assert_eq!(r.transition_lipschitz, 0.0);
        let chk = r.get("own_to_shared_density").unwrap();
        assert!((chk.lhs - chk.rhs).abs() < 1e-15);
        assert!(r.all_passed());
    }
}

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{confidence_threshold, pac::regret2pac, record_log_prob, ConfidenceSet, Role, TransitionDataset, TransitionRecord};
use crate::classes::ModelClass;
use crate::dynamics::{on_policy_value, sample_categorical, value_in, ConditionedMdp, FlowCache};
use crate::error::{MfError, Result};
use crate::model::MeanFieldModel;
use crate::planning::{best_response_in, exhaustive_mfc, mfc_plan, ne_solve, NeParams, PlannerBudget};
use crate::policy::{DeterministicPolicies, Policy};
use crate::seeding::{stream, substream, Stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPolicy {
    #[default]
    Uniform,
    /// Drawn from the `Policies` stream.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfcConfig {
    /// Number of learning iterations `K`.
    pub iterations: usize,
    pub delta: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub planner: PlannerBudget,
    #[serde(default)]
    pub initial: InitialPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfgConfig {
    pub iterations: usize,
    pub delta: f64,
    #[serde(default)]
    pub ne: NeParams,
    #[serde(default)]
    pub initial: InitialPolicy,
}

fn check_run(c: &ModelClass, iterations: usize, delta: f64) -> Result<()> {
    if !c.is_discrete() {
        return Err(MfError::UnsupportedFamily("gaussian_mean"));
    }
    if iterations == 0 {
        return Err(MfError::Parameter("iterations must be positive".into()));
    }
    confidence_threshold(c.len(), iterations, c.horizon(), delta).map(|_| ())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerMode {
    Mfc,
    Mfg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub k: usize,
    pub conf_set_size: usize,
    pub truth_in_set: bool,
    /// Model whose plan or equilibrium produced `pi^{k+1}`.
    pub chosen_model: usize,
    /// Model attaining the optimistic deviation gap (games only).
    pub deviation_model: Option<usize>,
    /// Planner value of `pi^{k+1}` (control) or the optimistic gap
    /// `max_{M in set} Delta_M(pi~, pi^{k+1})` (games).
    pub optimistic: f64,
    /// Exact `E_Opt(pi^{k+1})` or `E_NE(pi^{k+1})` in the true model.
    pub true_metric: f64,
    /// Whether the equilibrium solve for `pi^{k+1}` converged (games only).
    pub ne_converged: Option<bool>,
    /// Wall-clock time of the iteration. Not serialized, so traces stay reproducible.
    #[serde(skip)]
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub mode: LearnerMode,
    pub seed: u64,
    pub iterations: Vec<IterationTrace>,
    /// Trajectories sampled from the true model, including the final selection.
    pub trajectories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub policy: Policy,
    /// Iteration `k` whose output `pi^{k+1}` was returned.
    pub selected_iteration: usize,
    /// `E_Opt` or `E_NE` of the returned policy in the true model.
    pub final_metric: f64,
    pub trace: RunTrace,
}

/// Shared state of the learning loop: data, incremental scores and flows.
struct Learner<'a> {
    class: &'a ModelClass,
    data: TransitionDataset,
    scores: Vec<f64>,
    scored: usize,
    cache: FlowCache,
    threshold: f64,
    trajectories: usize,
    sampler: StreamRng,
}

impl<'a> Learner<'a> {
    fn new(class: &'a ModelClass, iterations: usize, delta: f64, seed: u64) -> Result<Self> {
        Ok(Learner {
            class,
            data: TransitionDataset::new(),
            scores: vec![0.0; class.len()],
            scored: 0,
            cache: FlowCache::new(),
            threshold: confidence_threshold(class.len(), iterations, class.horizon(), delta)?,
            trajectories: 0,
            sampler: stream(seed, Stream::Trajectory),
        })
    }

    /// One transition at step `h` from a fresh trajectory of `behavior`
    /// against the population flow of `population` in the true model.
    fn sample_at(&mut self, behavior: &Policy, population: &Policy, h: usize) -> Result<(usize, usize, usize)> {
        let truth = self.class.truth();
        let flow = self.cache.get(truth, population)?;
        let mdp = ConditionedMdp::new(truth, &flow)?;
        self.trajectories += 1;
        let mut s = sample_categorical(truth.mu1().probs(), &mut self.sampler);
        for t in 0..truth.horizon() {
            let a = sample_categorical(behavior.row(t, s), &mut self.sampler);
            let s_next = sample_categorical(mdp.kernel(t, s, a), &mut self.sampler);
            if t == h {
                return Ok((s, a, s_next));
            }
            s = s_next;
        }
        unreachable!("h < horizon")
    }

    fn collect(&mut self, main: &Policy, deviant: Option<&Policy>) -> Result<()> {
        let k = self.data.begin_iteration(main.clone(), deviant.unwrap_or(main).clone())?;
        for h in 0..self.class.horizon() {
            let (s, a, s_next) = self.sample_at(main, main, h)?;
            self.data.push(TransitionRecord { k, h, s, a, s_next, role: Role::Main })?;
            if let Some(dev) = deviant {
                let (s, a, s_next) = self.sample_at(dev, main, h)?;
                self.data.push(TransitionRecord { k, h, s, a, s_next, role: Role::Deviant })?;
            }
        }
        Ok(())
    }

    /// Adds the new records to the running scores and rebuilds the set.
    fn update(&mut self) -> Result<ConfidenceSet> {
        let new = &self.data.records()[self.scored..];
        for (i, m) in self.class.models().iter().enumerate() {
            for r in new {
                self.scores[i] += record_log_prob(m, &self.data, r, &self.cache)?;
            }
        }
        self.scored = self.data.records().len();
        Ok(ConfidenceSet::from_scores(self.scores.clone(), self.threshold))
    }
}

fn initial_policy(c: &ModelClass, initial: InitialPolicy, seed: u64) -> Policy {
    let (n, na, horizon) = (c.states(), c.actions(), c.horizon());
    match initial {
        InitialPolicy::Uniform => Policy::uniform(horizon, n, na),
        InitialPolicy::Random => Policy::random(horizon, n, na, &mut stream(seed, Stream::Policies)),
    }
}

/// Optimum of the true model used for `E_Opt`: exhaustive over deterministic
/// policies when within the planner's cap, otherwise the planner's value.
fn reference_optimum(truth: &MeanFieldModel, budget: &PlannerBudget, seed: u64) -> Result<f64> {
    let count = DeterministicPolicies::count(truth.horizon(), truth.states(), truth.actions());
    if count <= budget.exhaustive_cap as u128 {
        Ok(exhaustive_mfc(truth)?.1)
    } else {
        let mut rng = substream(seed, Stream::PlannerRestarts, u64::MAX);
        Ok(mfc_plan(truth, budget, &mut rng)?.value)
    }
}

/// Optimistic control learner: plan in every model of the confidence set,
/// follow the best plan, and convert the iterates with Regret2PAC.
pub fn run_mfc(c: &ModelClass, cfg: &MfcConfig, seed: u64) -> Result<RunOutcome> {
    check_run(c, cfg.iterations, cfg.delta)?;
    let truth = c.truth();
    let optimum = reference_optimum(truth, &cfg.planner, seed)?;
    let mut learner = Learner::new(c, cfg.iterations, cfg.delta, seed)?;
    let mut plans: HashMap<usize, (Policy, f64)> = HashMap::new();
    let mut pi = initial_policy(c, cfg.initial, seed);
    let mut candidates = Vec::with_capacity(cfg.iterations);
    let mut iterations = Vec::with_capacity(cfg.iterations);
    for k in 0..cfg.iterations {
        let started = Instant::now();
        learner.collect(&pi, None)?;
        let set = learner.update()?;
        let mut best: Option<(usize, f64)> = None;
        for &i in &set.members {
            if let std::collections::hash_map::Entry::Vacant(e) = plans.entry(i) {
                let mut rng = substream(seed, Stream::PlannerRestarts, i as u64);
                let plan = mfc_plan(&c.models()[i], &cfg.planner, &mut rng)?;
                e.insert((plan.policy, plan.value));
            }
            let v = plans[&i].1;
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        let (chosen, value) = best.expect("confidence set is nonempty");
        pi = plans[&chosen].0.clone();
        iterations.push(IterationTrace {
            k,
            conf_set_size: set.len(),
            truth_in_set: set.contains(c.truth_index()),
            chosen_model: chosen,
            deviation_model: None,
            optimistic: value,
            true_metric: optimum - on_policy_value(truth, &pi)?,
            ne_converged: None,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        candidates.push(pi.clone());
    }
    let mut rng = stream(seed, Stream::Regret2Pac);
    let pac = regret2pac(&candidates, truth, cfg.epsilon, cfg.delta, &mut rng)?;
    let trace = RunTrace { mode: LearnerMode::Mfc, seed, iterations, trajectories: learner.trajectories + pac.trajectories };
    let final_metric = optimum - on_policy_value(truth, &pac.policy)?;
    Ok(RunOutcome { policy: pac.policy, selected_iteration: pac.chosen, final_metric, trace })
}

struct Equilibrium {
    policy: Policy,
    converged: bool,
}

/// Exact `(Delta_M(BR, pi), BR)` for the best deviation in `m` against `pi`.
fn best_deviation(m: &MeanFieldModel, pi: &Policy, cache: &FlowCache) -> Result<(f64, Policy)> {
    let flow = cache.get(m, pi)?;
    let mdp = ConditionedMdp::new(m, &flow)?;
    let br = best_response_in(&mdp, m.mu1());
    Ok((br.value - value_in(&mdp, m.mu1(), pi).j, br.policy))
}

/// Game learner: solve an equilibrium of a randomly picked plausible model,
/// probe it with the most profitable deviation over the confidence set, and
/// return the iterate with the smallest optimistic gap.
pub fn run_mfg(c: &ModelClass, cfg: &MfgConfig, seed: u64) -> Result<RunOutcome> {
    check_run(c, cfg.iterations, cfg.delta)?;
    cfg.ne.validate()?;
    let truth = c.truth();
    let mut learner = Learner::new(c, cfg.iterations, cfg.delta, seed)?;
    let mut picker = stream(seed, Stream::ModelPick);
    let mut equilibria: HashMap<usize, Equilibrium> = HashMap::new();
    // (deviation model, equilibrium model) -> (gap, deviation policy)
    let mut deviations: HashMap<(usize, usize), (f64, Policy)> = HashMap::new();
    let mut true_gaps: HashMap<usize, f64> = HashMap::new();
    let mut pi = initial_policy(c, cfg.initial, seed);
    let mut pi_dev = pi.clone();
    let mut iterations = Vec::with_capacity(cfg.iterations);
    let mut incumbent: Option<(usize, f64, Policy, f64)> = None;
    for k in 0..cfg.iterations {
        let started = Instant::now();
        learner.collect(&pi, Some(&pi_dev))?;
        let set = learner.update()?;
        let chosen = set.members[picker.random_range(0..set.len())];
        if let std::collections::hash_map::Entry::Vacant(e) = equilibria.entry(chosen) {
            let mut rng = substream(seed, Stream::PlannerRestarts, chosen as u64);
            let res = ne_solve(&c.models()[chosen], &cfg.ne, &mut rng)?;
            e.insert(Equilibrium { policy: res.policy, converged: res.converged });
        }
        let eq = &equilibria[&chosen];
        let mut best: Option<(usize, f64)> = None;
        for &i in &set.members {
            if let std::collections::hash_map::Entry::Vacant(e) = deviations.entry((i, chosen)) {
                e.insert(best_deviation(&c.models()[i], &eq.policy, &learner.cache)?);
            }
            let gap = deviations[&(i, chosen)].0;
            if best.is_none_or(|(_, b)| gap > b) {
                best = Some((i, gap));
            }
        }
        let (dev_model, gap) = best.expect("confidence set is nonempty");
        let true_metric = match true_gaps.get(&chosen) {
            Some(&g) => g,
            None => {
                let g = best_deviation(truth, &eq.policy, &learner.cache)?.0;
                true_gaps.insert(chosen, g);
                g
            }
        };
        pi = eq.policy.clone();
        pi_dev = deviations[&(dev_model, chosen)].1.clone();
        iterations.push(IterationTrace {
            k,
            conf_set_size: set.len(),
            truth_in_set: set.contains(c.truth_index()),
            chosen_model: chosen,
            deviation_model: Some(dev_model),
            optimistic: gap,
            true_metric,
            ne_converged: Some(eq.converged),
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        if incumbent.as_ref().is_none_or(|(_, g, _, _)| gap < *g) {
            incumbent = Some((k, gap, pi.clone(), true_metric));
        }
    }
    let (selected_iteration, _, policy, final_metric) = incumbent.expect("at least one iteration");
    let trace = RunTrace { mode: LearnerMode::Mfg, seed, iterations, trajectories: learner.trajectories };
    Ok(RunOutcome { policy, selected_iteration, final_metric, trace })
}

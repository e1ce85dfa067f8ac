//! MLE confidence-set learners for mean-field control and games, and the
//! regret-to-PAC conversion.
//!
//! Iterations are 0-based: iteration `k` collects data with the policies
//! logged at `k` and produces the policies of iteration `k + 1`.

mod pac;
mod run;

pub use pac::{regret2pac, regret2pac_rounds, regret2pac_trajectories, Regret2PacResult};
pub use run::{run_mfc, run_mfg, InitialPolicy, IterationTrace, LearnerMode, MfcConfig, MfgConfig, RunOutcome, RunTrace};

use serde::{Deserialize, Serialize};

use crate::classes::ModelClass;
use crate::dynamics::FlowCache;
use crate::error::{MfError, Result};
use crate::model::MeanFieldModel;
use crate::policy::Policy;

/// Log-probabilities below `ln(PROB_FLOOR)` are clipped.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Main,
    Deviant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub k: usize,
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub role: Role,
}

/// Append-only transition data with the `(pi^k, pi~^k)` pair logged per iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionDataset {
    records: Vec<TransitionRecord>,
    policies: Vec<(Policy, Policy)>,
}

impl TransitionDataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens iteration `k = iterations()` with its population and deviation policies.
    pub fn begin_iteration(&mut self, main: Policy, deviant: Policy) -> Result<usize> {
        if !main.same_shape(&deviant) {
            return Err(MfError::Dimension("main and deviant policies differ in shape".into()));
        }
        if let Some((first, _)) = self.policies.first() {
            if !first.same_shape(&main) {
                return Err(MfError::Dimension("policy shape changed between iterations".into()));
            }
        }
        self.policies.push((main, deviant));
        Ok(self.policies.len() - 1)
    }

    /// Appends a record for an already opened iteration.
    pub fn push(&mut self, record: TransitionRecord) -> Result<()> {
        let Some((pi, _)) = self.policies.get(record.k) else {
            return Err(MfError::Index(format!("iteration {} was not opened", record.k)));
        };
        if record.h >= pi.horizon() || record.s >= pi.states() || record.s_next >= pi.states() || record.a >= pi.actions() {
            return Err(MfError::Index(format!("record {record:?} outside the policy shape")));
        }
        if self.records.last().is_some_and(|last| last.k > record.k) {
            return Err(MfError::Index("records must be appended in iteration order".into()));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TransitionRecord] {
        &self.records
    }

    pub fn policies(&self) -> &[(Policy, Policy)] {
        &self.policies
    }

    pub fn iterations(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of iterations `< upto`.
    pub fn prefix(&self, upto: usize) -> &[TransitionRecord] {
        let end = self.records.partition_point(|r| r.k < upto);
        &self.records[..end]
    }

    /// Number of records with the given iteration, step and role.
    pub fn count(&self, k: usize, h: usize, role: Role) -> usize {
        self.records.iter().filter(|r| r.k == k && r.h == h && r.role == role).count()
    }
}

/// `ln P_h(s' | s, a, mu^{pi^k}_{M,h})` for one record, floored.
pub(crate) fn record_log_prob(m: &MeanFieldModel, data: &TransitionDataset, r: &TransitionRecord, cache: &FlowCache) -> Result<f64> {
    let flow = cache.get(m, &data.policies[r.k].0)?;
    let mut row = vec![0.0; m.states()];
    m.transition_into(r.h, r.s, r.a, flow.step(r.h).probs(), &mut row);
    Ok(row[r.s_next].max(PROB_FLOOR).ln())
}

/// MLE score of `m` over the records of iterations `< upto`: floored
/// log-likelihoods of main and deviant transitions, each conditioned on the
/// population flow of that iteration's main policy under `m`.
pub fn mle_loss(m: &MeanFieldModel, data: &TransitionDataset, upto: usize) -> Result<f64> {
    mle_loss_cached(m, data, upto, &FlowCache::new())
}

pub fn mle_loss_cached(m: &MeanFieldModel, data: &TransitionDataset, upto: usize, cache: &FlowCache) -> Result<f64> {
    m.require_discrete()?;
    let mut total = 0.0;
    for r in data.prefix(upto) {
        total += record_log_prob(m, data, r, cache)?;
    }
    Ok(total)
}

/// `ln(2 |M| K H / delta)`.
pub fn confidence_threshold(class_size: usize, iterations: usize, horizon: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MfError::Parameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    if class_size == 0 || iterations == 0 || horizon == 0 {
        return Err(MfError::Parameter("class size, K and H must be positive".into()));
    }
    Ok((2.0 * class_size as f64 * iterations as f64 * horizon as f64 / delta).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub members: Vec<usize>,
    pub threshold: f64,
    pub scores: Vec<f64>,
}

impl ConfidenceSet {
    /// Members are the models scoring within `threshold` of the best.
    pub fn from_scores(scores: Vec<f64>, threshold: f64) -> Self {
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let members = (0..scores.len()).filter(|&i| scores[i] >= best - threshold).collect();
        ConfidenceSet { members, threshold, scores }
    }

    pub fn contains(&self, index: usize) -> bool {
        self.members.binary_search(&index).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Confidence set after the first `upto` iterations of data, for a run of
/// `iterations` (K) iterations.
pub fn confidence_set(c: &ModelClass, data: &TransitionDataset, upto: usize, iterations: usize, delta: f64) -> Result<ConfidenceSet> {
    let threshold = confidence_threshold(c.len(), iterations, c.horizon(), delta)?;
    let cache = FlowCache::new();
    let scores = c.models().iter().map(|m| mle_loss_cached(m, data, upto, &cache)).collect::<Result<Vec<_>>>()?;
    Ok(ConfidenceSet::from_scores(scores, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Density;
    use crate::model::{RewardFamily, TransitionFamily};

    fn coin(p: f64) -> MeanFieldModel {
        MeanFieldModel::new(
            "coin",
            2,
            1,
            1,
            Density::dirac(2, 0),
            TransitionFamily::DensityFree { table: vec![1.0 - p, p, 1.0 - p, p] },
            RewardFamily::zero(1, 2, 1),
        )
        .unwrap()
    }

    fn one_record(s_next: usize) -> TransitionDataset {
        let mut d = TransitionDataset::new();
        let pi = Policy::uniform(1, 2, 1);
        d.begin_iteration(pi.clone(), pi).unwrap();
        d.push(TransitionRecord { k: 0, h: 0, s: 0, a: 0, s_next, role: Role::Main }).unwrap();
        d
    }

    #[test]
    fn empty_dataset_scores_zero() {
        assert_eq!(mle_loss(&coin(0.3), &TransitionDataset::new(), 10).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_truth_scores_zero() {
        assert_eq!(mle_loss(&coin(1.0), &one_record(1), 1).unwrap(), 0.0);
    }

    #[test]
    fn quarter_probability() {
        let v = mle_loss(&coin(0.25), &one_record(1), 1).unwrap();
        assert!((v - 0.25f64.ln()).abs() < 1e-15);
        assert!((v + 1.3863).abs() < 1e-4);
    }

    #[test]
    fn zero_probability_is_floored() {
        assert_eq!(mle_loss(&coin(0.0), &one_record(1), 1).unwrap(), PROB_FLOOR.ln());
    }

    #[test]
    fn threshold_value() {
        let t = confidence_threshold(10, 100, 5, 0.05).unwrap();
        assert!((t - 200000f64.ln()).abs() < 1e-12);
        assert!((t - 12.2061).abs() < 1e-4);
    }

    #[test]
    fn no_data_keeps_whole_class() {
        let c = ModelClass::new(vec![coin(0.2), coin(0.5), coin(0.9)], 1).unwrap();
        let set = confidence_set(&c, &TransitionDataset::new(), 0, 10, 0.1).unwrap();
        assert_eq!(set.members, vec![0, 1, 2]);
    }

    #[test]
    fn lagging_model_excluded() {
        let c = ModelClass::new(vec![coin(1.0), coin(0.0)], 0).unwrap();
        let data = one_record(1);
        let set = confidence_set(&c, &data, 1, 1, 0.1).unwrap();
        // Gap 27.6 against threshold ln(2 * 2 * 1 * 1 / 0.1) = 3.69.
        assert_eq!(set.members, vec![0]);
        assert!(set.contains(0) && !set.contains(1));
    }

    #[test]
    fn records_must_reference_open_iterations() {
        let mut d = TransitionDataset::new();
        assert!(d.push(TransitionRecord { k: 0, h: 0, s: 0, a: 0, s_next: 0, role: Role::Main }).is_err());
    }
}

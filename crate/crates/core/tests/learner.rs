mod common;

use mfrl_core::classes::{generate_class, ClassGenSpec, FamilyKind};
use mfrl_core::learner::{
    confidence_set, confidence_threshold, mle_loss, regret2pac, regret2pac_rounds, regret2pac_trajectories, run_mfc,
    run_mfg, InitialPolicy, MfcConfig, MfgConfig, Role, TransitionDataset, TransitionRecord,
};
use mfrl_core::planning::{exploitability, NeParams, PlannerBudget};
use mfrl_core::seeding::{stream, Stream};
use mfrl_core::Policy;
use proptest::prelude::*;
use rand::Rng;

fn random_dataset(seed: u64, s: usize, a: usize, h: usize, iters: usize) -> TransitionDataset {
    let mut rng = stream(seed, Stream::Trajectory);
    let mut d = TransitionDataset::new();
    for k in 0..iters {
        let pi = Policy::random(h, s, a, &mut rng);
        assert_eq!(d.begin_iteration(pi.clone(), pi).unwrap(), k);
        for step in 0..h {
            for role in [Role::Main, Role::Deviant] {
                let r = TransitionRecord {
                    k,
                    h: step,
                    s: rng.random_range(0..s),
                    a: rng.random_range(0..a),
                    s_next: rng.random_range(0..s),
                    role,
                };
                d.push(r).unwrap();
            }
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dataset_prefixes_nest(seed in any::<u64>(), iters in 1usize..8) {
        let d = random_dataset(seed, 3, 2, 3, iters);
        prop_assert_eq!(d.iterations(), iters);
        for upto in 0..=iters {
            let pre = d.prefix(upto);
            prop_assert_eq!(pre.len(), upto * 3 * 2);
            prop_assert!(pre.iter().all(|r| r.k < upto));
        }
        for k in 0..iters {
            for h in 0..3 {
                prop_assert_eq!(d.count(k, h, Role::Main), 1);
                prop_assert_eq!(d.count(k, h, Role::Deviant), 1);
            }
        }
    }

    #[test]
    fn scores_and_sets_are_consistent(seed in any::<u64>(), iters in 1usize..6) {
        let c = generate_class(&ClassGenSpec::new(3, 2, 3, 4, FamilyKind::ConvexMixture, seed % 1000)).unwrap();
        let d = random_dataset(seed, 3, 2, 3, iters);
        let mut last = vec![0.0; c.len()];
        for upto in 0..=iters {
            let scores: Vec<f64> = c.models().iter().map(|m| mle_loss(m, &d, upto).unwrap()).collect();
            for (s, l) in scores.iter().zip(&last) {
                // Log-likelihoods only decrease as data is added.
                prop_assert!(*s <= *l + 1e-12);
                prop_assert!(*s <= 0.0);
            }
            let set = confidence_set(&c, &d, upto, iters, 0.1).unwrap();
            let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let t = confidence_threshold(c.len(), iters, 3, 0.1).unwrap();
            for (i, s) in scores.iter().enumerate() {
                prop_assert_eq!(set.contains(i), *s >= best - t);
            }
            prop_assert!(!set.is_empty());
            last = scores;
        }
    }
}

#[test]
fn records_outside_shape_rejected() {
    let mut d = TransitionDataset::new();
    let pi = Policy::uniform(2, 2, 2);
    d.begin_iteration(pi.clone(), pi).unwrap();
    assert!(d.push(TransitionRecord { k: 0, h: 2, s: 0, a: 0, s_next: 0, role: Role::Main }).is_err());
    assert!(d.push(TransitionRecord { k: 0, h: 0, s: 0, a: 0, s_next: 2, role: Role::Main }).is_err());
    assert!(d.begin_iteration(Policy::uniform(3, 2, 2), Policy::uniform(3, 2, 2)).is_err());
}

#[test]
fn regret2pac_draws_from_candidates() {
    let c = generate_class(&ClassGenSpec::new(2, 2, 2, 1, FamilyKind::ConvexMixture, 3)).unwrap();
    let m = c.truth();
    let cands: Vec<Policy> = (0..4).map(|i| common::random_policy(m, i)).collect();
    let r = regret2pac(&cands, m, 0.3, 0.2, &mut stream(1, Stream::Regret2Pac)).unwrap();
    assert_eq!(r.picks.len(), regret2pac_rounds(0.2).unwrap());
    assert_eq!(r.trajectories, r.picks.len() * regret2pac_trajectories(0.3, 0.2).unwrap());
    assert_eq!(r.policy, cands[r.chosen]);
    assert!(r.picks.contains(&r.chosen));
}

#[test]
fn mfc_keeps_truth_and_improves() {
    let c = generate_class(&ClassGenSpec::new(3, 2, 2, 4, FamilyKind::ConvexMixture, 21)).unwrap();
    let cfg = MfcConfig { iterations: 30, delta: 0.1, epsilon: 0.2, planner: PlannerBudget::default(), initial: InitialPolicy::Uniform };
    let mut covered = 0;
    for seed in 0..10 {
        let out = run_mfc(&c, &cfg, seed).unwrap();
        covered += usize::from(out.trace.iterations.iter().all(|it| it.truth_in_set));
        assert!(out.final_metric >= -1e-12);
        let sizes: Vec<usize> = out.trace.iterations.iter().map(|it| it.conf_set_size).collect();
        assert!(sizes.iter().all(|&s| (1..=4).contains(&s)));
    }
    assert!(covered >= 8);
}

#[test]
fn mfg_gap_bounds_true_exploitability() {
    let mut spec = ClassGenSpec::new(3, 2, 3, 4, FamilyKind::ConvexMixture, 31);
    spec.contraction = true;
    let c = generate_class(&spec).unwrap();
    let cfg = MfgConfig { iterations: 25, delta: 0.1, ne: NeParams::default(), initial: InitialPolicy::Uniform };
    for seed in 0..5 {
        let out = run_mfg(&c, &cfg, seed).unwrap();
        let at = &out.trace.iterations[out.selected_iteration];
        assert!((exploitability(c.truth(), &out.policy).unwrap() - out.final_metric).abs() < 1e-12);
        if at.truth_in_set {
            assert!(at.optimistic >= out.final_metric - 1e-10, "seed {seed}");
        }
        assert_eq!(out.trace.trajectories, 2 * 3 * 25);
    }
}

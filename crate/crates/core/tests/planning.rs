mod common;

use mfrl_core::classes::{generate_class, ClassGenSpec, FamilyKind};
use mfrl_core::dynamics::density_flow;
use mfrl_core::planning::{
    best_response, bound_check_suite, contraction_certificate, delta_gap, exhaustive_mfc, exploitability, ne_solve,
    CheckStatus, NeParams,
};
use mfrl_core::policy::DeterministicPolicies;
use mfrl_core::seeding::{stream, Stream};
use mfrl_core::Policy;
use proptest::prelude::*;

#[test]
fn exhaustive_plan_matches_enumerated_values() {
    for seed in 0..15u64 {
        let c = common::random_class(seed, 2, 2, 3, 1, FamilyKind::ConvexMixture);
        let m = c.truth();
        let mut best = f64::NEG_INFINITY;
        for pi in DeterministicPolicies::new(m.horizon(), m.states(), m.actions()) {
            let pop = common::flow(m, &pi);
            best = best.max(common::enumerated_value(m, &pi, &pop));
        }
        let (_, value) = exhaustive_mfc(m).unwrap();
        assert!((value - best).abs() < 1e-10, "seed {seed}");
    }
}

#[test]
fn best_response_beats_every_deterministic_deviation() {
    for seed in 0..15u64 {
        let c = common::random_class(seed, 3, 2, 3, 1, FamilyKind::Interpolated);
        let m = c.truth();
        let pi = common::random_policy(m, seed);
        let flow = density_flow(m, &pi).unwrap();
        let pop = common::flow(m, &pi);
        let br = best_response(m, &flow).unwrap();
        let top = DeterministicPolicies::new(m.horizon(), m.states(), m.actions())
            .map(|d| common::enumerated_value(m, &d, &pop))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((br.value - top).abs() < 1e-10, "seed {seed}");
        let gap = exploitability(m, &pi).unwrap();
        assert!((gap - (top - common::enumerated_value(m, &pi, &pop))).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exploitability_is_nonnegative(seed in 0u64..10_000) {
        let c = common::random_class(seed, 4, 3, 4, 1, FamilyKind::ConvexMixture);
        let m = c.truth();
        let pi = common::random_policy(m, seed);
        prop_assert!(exploitability(m, &pi).unwrap() >= -1e-10);
        let br = best_response(m, &density_flow(m, &pi).unwrap()).unwrap().policy;
        prop_assert!((delta_gap(m, &br, &pi).unwrap() - exploitability(m, &pi).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn bound_checks_hold(seed in 0u64..10_000) {
        let c = common::random_class(seed, 4, 3, 4, 2, FamilyKind::ConvexMixture);
        let (m, mt) = (&c.models()[0], &c.models()[1]);
        let pi = common::random_policy(m, seed);
        let pi_tilde = common::random_policy(m, seed ^ 0x5555);
        let cert = contraction_certificate(m, mt).unwrap();
        let report = bound_check_suite(m, mt, &pi, &pi_tilde, cert).unwrap();
        for chk in &report.checks {
            prop_assert!(chk.status != CheckStatus::Fail, "{} slack {}", chk.name, chk.slack);
        }
    }
}

#[test]
fn contraction_check_runs_on_certified_pairs() {
    let mut spec = ClassGenSpec::new(3, 2, 3, 2, FamilyKind::ConvexMixture, 4);
    spec.contraction = true;
    let c = generate_class(&spec).unwrap();
    let (m, mt) = (&c.models()[0], &c.models()[1]);
    let cert = contraction_certificate(m, mt).unwrap();
    assert!(cert.is_some());
    let pi = Policy::uniform(3, 3, 2);
    let report = bound_check_suite(m, mt, &pi, &pi, cert).unwrap();
    assert_eq!(report.get("own_to_shared_contraction").unwrap().status, CheckStatus::Pass);
}

#[test]
fn ne_reports_convergence_honestly() {
    for seed in 0..20u64 {
        let family = if seed % 2 == 0 { FamilyKind::ConvexMixture } else { FamilyKind::Interpolated };
        let c = common::random_class(seed, 3, 3, 3, 1, family);
        let m = c.truth();
        for max_iters in [3, 2000] {
            let params = NeParams { max_iters, ..NeParams::default() };
            let r = ne_solve(m, &params, &mut stream(seed, Stream::PlannerRestarts)).unwrap();
            assert_eq!(r.converged, r.fixed_point_residual <= params.tolerance, "seed {seed}");
            assert!((r.exploitability - exploitability(m, &r.policy).unwrap()).abs() < 1e-12);
            assert!(r.consistency_residual <= 1e-9);
        }
    }
}

#[test]
fn density_free_equilibrium_is_the_optimal_policy() {
    for seed in 0..10u64 {
        let mut spec = ClassGenSpec::new(3, 2, 3, 1, FamilyKind::DensityFree, seed);
        spec.reward_coupling = 0.0;
        let c = generate_class(&spec).unwrap();
        let m = c.truth();
        let r = ne_solve(m, &NeParams::default(), &mut stream(seed, Stream::PlannerRestarts)).unwrap();
        assert!(r.converged, "seed {seed}");
        assert!(r.exploitability <= 1e-8);
        let (_, opt) = exhaustive_mfc(m).unwrap();
        let pop = common::flow(m, &r.policy);
        assert!((common::enumerated_value(m, &r.policy, &pop) - opt).abs() < 1e-8);
    }
}

#[test]
fn same_seed_same_equilibrium() {
    let c = common::random_class(3, 3, 2, 3, 1, FamilyKind::ConvexMixture);
    let a = ne_solve(c.truth(), &NeParams::default(), &mut stream(1, Stream::PlannerRestarts)).unwrap();
    let b = ne_solve(c.truth(), &NeParams::default(), &mut stream(1, Stream::PlannerRestarts)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

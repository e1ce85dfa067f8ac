use mfrl_core::density::{hellinger_slices, random_simplex, tv_slices};
use mfrl_core::planning::project_simplex;
use mfrl_core::{gaussian_hellinger, hellinger_distance, tv_distance, Density};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn pair(len: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (random_simplex(len, &mut rng), random_simplex(len, &mut rng))
}

fn half_l1(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn bhattacharyya(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum()
}

proptest! {
    #[test]
    fn tv_is_half_l1(len in 2usize..=10, seed in any::<u64>()) {
        let (p, q) = pair(len, seed);
        prop_assert!((tv_slices(&p, &q).unwrap() - half_l1(&p, &q)).abs() <= 1e-12);
    }

    #[test]
    fn hellinger_sandwiches_tv(len in 2usize..=10, seed in any::<u64>()) {
        let (p, q) = pair(len, seed);
        let tv = tv_slices(&p, &q).unwrap();
        let h = hellinger_slices(&p, &q).unwrap();
        prop_assert!(2f64.sqrt() * h >= tv - 1e-12);
        prop_assert!(tv >= h * h - 1e-12);
        prop_assert!((h * h - (1.0 - bhattacharyya(&p, &q)).max(0.0)).abs() <= 1e-12);
    }

    #[test]
    fn distances_are_symmetric_and_bounded(len in 1usize..=8, seed in any::<u64>()) {
        let (p, q) = pair(len, seed);
        let (dp, dq) = (Density::new(p.clone()).unwrap(), Density::new(q.clone()).unwrap());
        for d in [tv_distance(&dp, &dq).unwrap(), hellinger_distance(&dp, &dq).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&d));
        }
        prop_assert_eq!(tv_distance(&dp, &dq).unwrap(), tv_distance(&dq, &dp).unwrap());
        prop_assert_eq!(tv_distance(&dp, &dp).unwrap(), 0.0);
        prop_assert!(hellinger_distance(&dp, &dp).unwrap() <= 1e-7);
    }

    #[test]
    fn projection_lands_on_simplex_and_is_nearest(v in prop::collection::vec(-3.0f64..3.0, 1..7), seed in any::<u64>()) {
        let p = project_simplex(&v);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let dist = |u: &[f64]| u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let other = random_simplex(v.len(), &mut rng);
            prop_assert!(dist(&p) <= dist(&other) + 1e-12);
        }
    }
}

/// Bhattacharyya coefficient of N(m1, s^2) and N(m2, s^2) by the trapezoid rule.
fn gaussian_bc_1d(m1: f64, m2: f64, sigma: f64) -> f64 {
    let (lo, hi) = (m1.min(m2) - 12.0 * sigma, m1.max(m2) + 12.0 * sigma);
    let steps = 200_000;
    let dx = (hi - lo) / steps as f64;
    let pdf = |x: f64, m: f64| (-(x - m).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let mut total = 0.0;
    for i in 0..=steps {
        let x = lo + i as f64 * dx;
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        total += w * (pdf(x, m1) * pdf(x, m2)).sqrt();
    }
    total * dx
}

#[test]
fn gaussian_hellinger_matches_quadrature() {
    for (m1, m2, sigma) in [([0.0, 0.0], [1.0, 0.0], 0.5), ([0.3, -1.0], [-0.2, 0.4], 1.3), ([2.0, 2.0], [2.0, 2.0], 0.7)] {
        let bc = gaussian_bc_1d(m1[0], m2[0], sigma) * gaussian_bc_1d(m1[1], m2[1], sigma);
        // Squared distances: the square root would amplify quadrature error near zero.
        let expected = 1.0 - bc;
        let got = gaussian_hellinger(&m1, &m2, sigma).unwrap().powi(2);
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }
}

#[test]
fn disjoint_supports_are_at_distance_one() {
    let p = [1.0, 0.0, 0.0];
    let q = [0.0, 0.5, 0.5];
    assert_eq!(tv_slices(&p, &q).unwrap(), 1.0);
    assert_eq!(hellinger_slices(&p, &q).unwrap(), 1.0);
}

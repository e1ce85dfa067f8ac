//! Reference computations written directly against the raw model tables.
#![allow(dead_code)]

use mfrl_core::classes::{generate_class, ClassGenSpec, FamilyKind, ModelClass};
use mfrl_core::seeding::{stream, Stream};
use mfrl_core::{MeanFieldModel, Policy, TransitionFamily};
use rand::Rng;

pub fn kernel(m: &MeanFieldModel, h: usize, s: usize, a: usize, mu: &[f64]) -> Vec<f64> {
    let (n, na) = (m.states(), m.actions());
    let row = (h * n + s) * na + a;
    let mix = |k: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (x, w) in mu.iter().enumerate() {
            for t in 0..n {
                out[t] += w * k[(row * n + x) * n + t];
            }
        }
        out
    };
    match m.transition() {
        TransitionFamily::DensityFree { table } => table[row * n..(row + 1) * n].to_vec(),
        TransitionFamily::ConvexMixture { kernel } => mix(kernel),
        TransitionFamily::Interpolated { weight, base, kernel } => {
            let k = mix(kernel);
            (0..n).map(|t| (1.0 - weight) * base[row * n + t] + weight * k[t]).collect()
        }
        TransitionFamily::LowRank { d, features, psi } => {
            let mut phi = vec![0.0; *d];
            for (x, w) in mu.iter().enumerate() {
                for j in 0..*d {
                    phi[j] += w * features[(row * n + x) * d + j];
                }
            }
            (0..n).map(|t| (0..*d).map(|j| phi[j] * psi[(h * d + j) * n + t]).sum()).collect()
        }
        TransitionFamily::GaussianMean { .. } => panic!("discrete families only"),
    }
}

pub fn reward(m: &MeanFieldModel, h: usize, s: usize, a: usize, mu: &[f64]) -> f64 {
    let (n, na) = (m.states(), m.actions());
    let row = (h * n + s) * na + a;
    let r = m.reward();
    let v = r.r0[row] + (0..n).map(|x| r.r1[row * n + x] * mu[x]).sum::<f64>();
    v.max(0.0).min(1.0 / m.horizon() as f64)
}

/// Population densities `mu_0 .. mu_{H-1}` of `pi`.
pub fn flow(m: &MeanFieldModel, pi: &Policy) -> Vec<Vec<f64>> {
    let n = m.states();
    let mut out = vec![m.mu1().probs().to_vec()];
    for h in 0..m.horizon() - 1 {
        let mu = &out[h];
        let mut next = vec![0.0; n];
        for s in 0..n {
            for a in 0..m.actions() {
                let p = kernel(m, h, s, a, mu);
                for t in 0..n {
                    next[t] += mu[s] * pi.prob(h, s, a) * p[t];
                }
            }
        }
        out.push(next);
    }
    out
}

/// Visits every trajectory of `behavior` against the frozen population `pop`,
/// calling `f(prob, states, actions)`.
pub fn enumerate(m: &MeanFieldModel, behavior: &Policy, pop: &[Vec<f64>], f: &mut dyn FnMut(f64, &[usize], &[usize])) {
    fn go(
        m: &MeanFieldModel,
        b: &Policy,
        pop: &[Vec<f64>],
        h: usize,
        prob: f64,
        ss: &mut Vec<usize>,
        aa: &mut Vec<usize>,
        f: &mut dyn FnMut(f64, &[usize], &[usize]),
    ) {
        if h == m.horizon() {
            f(prob, ss, aa);
            return;
        }
        let s = *ss.last().unwrap();
        for a in 0..m.actions() {
            let pa = b.prob(h, s, a);
            if pa == 0.0 {
                continue;
            }
            aa.push(a);
            if h + 1 == m.horizon() {
                go(m, b, pop, h + 1, prob * pa, ss, aa, f);
            } else {
                let p = kernel(m, h, s, a, &pop[h]);
                for (t, &pt) in p.iter().enumerate() {
                    if pt == 0.0 {
                        continue;
                    }
                    ss.push(t);
                    go(m, b, pop, h + 1, prob * pa * pt, ss, aa, f);
                    ss.pop();
                }
            }
            aa.pop();
        }
    }
    for (s, &p0) in m.mu1().probs().iter().enumerate() {
        if p0 > 0.0 {
            go(m, behavior, pop, 0, p0, &mut vec![s], &mut Vec::new(), f);
        }
    }
}

/// Expected return of `behavior` by summing over all trajectories.
pub fn enumerated_value(m: &MeanFieldModel, behavior: &Policy, pop: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    enumerate(m, behavior, pop, &mut |p, ss, aa| {
        let ret: f64 = (0..m.horizon()).map(|h| reward(m, h, ss[h], aa[h], &pop[h])).sum();
        total += p * ret;
    });
    total
}

/// `d_h(s, a)` by enumeration, flat S*A per step.
pub fn enumerated_occupancy(m: &MeanFieldModel, behavior: &Policy, pop: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let na = m.actions();
    let mut d = vec![vec![0.0; m.states() * na]; m.horizon()];
    enumerate(m, behavior, pop, &mut |p, ss, aa| {
        for h in 0..m.horizon() {
            d[h][ss[h] * na + aa[h]] += p;
        }
    });
    d
}

/// Small random instance; `seed` fixes shape and tables.
pub fn random_class(seed: u64, max_s: usize, max_a: usize, max_h: usize, size: usize, family: FamilyKind) -> ModelClass {
    let mut rng = stream(seed, Stream::ClassGen);
    let s = rng.random_range(1..=max_s);
    let a = rng.random_range(1..=max_a);
    let h = rng.random_range(1..=max_h);
    generate_class(&ClassGenSpec::new(s, a, h, size, family, seed)).unwrap()
}

pub fn random_policy(m: &MeanFieldModel, seed: u64) -> Policy {
    Policy::random(m.horizon(), m.states(), m.actions(), &mut stream(seed, Stream::Policies))
}

//! Finite model classes with a designated true model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{random_simplex, tv_unchecked, Density};
use crate::error::{MfError, Result};
use crate::lipschitz::{certified_gamma_bound, sampled_gamma_lower, transition_lipschitz};
use crate::model::{MeanFieldModel, RewardFamily, TransitionFamily};
use crate::seeding::{stream, Stream};

pub const CLASS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    DensityFree,
    ConvexMixture,
    Interpolated,
    LowRank,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::DensityFree => "density_free",
            FamilyKind::ConvexMixture => "convex_mixture",
            FamilyKind::Interpolated => "interpolated",
            FamilyKind::LowRank => "low_rank",
        }
    }
}

fn default_kernel_weight() -> f64 {
    0.3
}
fn default_anchor() -> f64 {
    0.5
}
fn default_rank() -> usize {
    2
}
fn default_reward_coupling() -> f64 {
    0.5
}
fn default_retries() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGenSpec {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub size: usize,
    pub family: FamilyKind,
    /// Mixing weight of the Dirichlet re-draw in each perturbed column, in `[0, 1]`.
    pub perturbation: f64,
    /// Inclusive `[lo, hi]` range every model's `L_T` must fall in.
    #[serde(default)]
    pub target_lt: Option<(f64, f64)>,
    #[serde(default)]
    pub contraction: bool,
    pub seed: u64,
    /// Weight of the population-dependent kernel (interpolated family and
    /// contraction mode); the density-free part gets `1 - kernel_weight`.
    #[serde(default = "default_kernel_weight")]
    pub kernel_weight: f64,
    /// Share of each density-free row taken from a per-step common density in
    /// contraction mode.
    #[serde(default = "default_anchor")]
    pub anchor: f64,
    #[serde(default = "default_rank")]
    pub rank: usize,
    /// Scale of the population-dependent reward part, relative to `1/H`.
    #[serde(default = "default_reward_coupling")]
    pub reward_coupling: f64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
}

impl ClassGenSpec {
    pub fn new(states: usize, actions: usize, horizon: usize, size: usize, family: FamilyKind, seed: u64) -> Self {
        ClassGenSpec {
            states,
            actions,
            horizon,
            size,
            family,
            perturbation: 0.5,
            target_lt: None,
            contraction: false,
            seed,
            kernel_weight: default_kernel_weight(),
            anchor: default_anchor(),
            rank: default_rank(),
            reward_coupling: default_reward_coupling(),
            max_retries: default_retries(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MfError::Parameter(msg));
        if self.states == 0 || self.actions == 0 || self.horizon == 0 {
            return bad("S, A and H must be positive".into());
        }
        if self.size == 0 {
            return bad("class size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.perturbation) {
            return bad(format!("perturbation {} outside [0, 1]", self.perturbation));
        }
        if !(0.0..=1.0).contains(&self.kernel_weight) || !(0.0..=1.0).contains(&self.anchor) {
            return bad("kernel_weight and anchor must lie in [0, 1]".into());
        }
        if self.contraction && self.kernel_weight > 0.3 {
            return bad("contraction mode needs a density-free share of at least 0.7".into());
        }
        if self.contraction && self.family == FamilyKind::LowRank {
            return bad("contraction mode is not available for the low-rank family".into());
        }
        if self.family == FamilyKind::LowRank && self.rank == 0 {
            return bad("rank must be positive".into());
        }
        if let Some((lo, hi)) = self.target_lt {
            if !(lo <= hi) {
                return bad(format!("empty L_T range [{lo}, {hi}]"));
            }
        }
        if !self.reward_coupling.is_finite() || self.reward_coupling < 0.0 {
            return bad("reward_coupling must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClassDoc", into = "ClassDoc")]
pub struct ModelClass {
    models: Vec<MeanFieldModel>,
    truth_index: usize,
    family: String,
    seed: Option<u64>,
    spec: Option<ClassGenSpec>,
}

#[derive(Serialize, Deserialize)]
struct ClassDoc {
    schema_version: u32,
    truth_index: usize,
    family: String,
    seed: Option<u64>,
    spec: Option<ClassGenSpec>,
    models: Vec<MeanFieldModel>,
}

impl TryFrom<ClassDoc> for ModelClass {
    type Error = MfError;
    fn try_from(d: ClassDoc) -> Result<Self> {
        if d.schema_version != CLASS_SCHEMA_VERSION {
            return Err(MfError::Serde(format!("unsupported class schema_version {}", d.schema_version)));
        }
        let mut c = ModelClass::new(d.models, d.truth_index)?;
        c.family = d.family;
        c.seed = d.seed;
        c.spec = d.spec;
        Ok(c)
    }
}

impl From<ModelClass> for ClassDoc {
    fn from(c: ModelClass) -> Self {
        ClassDoc {
            schema_version: CLASS_SCHEMA_VERSION,
            truth_index: c.truth_index,
            family: c.family,
            seed: c.seed,
            spec: c.spec,
            models: c.models,
        }
    }
}

impl ModelClass {
    /// Checks realizability and the shared shape, initial density and reward.
    pub fn new(models: Vec<MeanFieldModel>, truth_index: usize) -> Result<Self> {
        let Some(first) = models.first() else {
            return Err(MfError::InvalidModel("model class is empty".into()));
        };
        if truth_index >= models.len() {
            return Err(MfError::Index(format!("truth index {truth_index} for {} models", models.len())));
        }
        for m in &models[1..] {
            if !m.same_shape(first) {
                return Err(MfError::Dimension("models in a class must share S, A and H".into()));
            }
            if m.mu1() != first.mu1() || m.reward() != first.reward() {
                return Err(MfError::InvalidModel("models in a class must share mu1 and the reward".into()));
            }
        }
        let family = {
            let name = first.transition().name();
            if models.iter().all(|m| m.transition().name() == name) {
                name.to_string()
            } else {
                "mixed".to_string()
            }
        };
        Ok(ModelClass { models, truth_index, family, seed: None, spec: None })
    }

    pub fn models(&self) -> &[MeanFieldModel] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn truth_index(&self) -> usize {
        self.truth_index
    }

    pub fn truth(&self) -> &MeanFieldModel {
        &self.models[self.truth_index]
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn spec(&self) -> Option<&ClassGenSpec> {
        self.spec.as_ref()
    }

    pub fn states(&self) -> usize {
        self.models[0].states()
    }

    pub fn actions(&self) -> usize {
        self.models[0].actions()
    }

    pub fn horizon(&self) -> usize {
        self.models[0].horizon()
    }

    pub fn is_discrete(&self) -> bool {
        self.models.iter().all(|m| m.transition().is_discrete())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| MfError::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| MfError::Serde(e.to_string()))
    }
}

fn random_blocks<R: Rng + ?Sized>(blocks: usize, width: usize, rng: &mut R) -> Vec<f64> {
    let mut v = Vec::with_capacity(blocks * width);
    for _ in 0..blocks {
        v.extend(random_simplex(width, rng));
    }
    v
}

/// `(1 - scale) * block + scale * Dirichlet(1)` for every block of `width`.
fn perturb_blocks<R: Rng + ?Sized>(v: &[f64], width: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    for block in v.chunks(width) {
        let fresh = random_simplex(width, rng);
        out.extend(block.iter().zip(&fresh).map(|(b, f)| (1.0 - scale) * b + scale * f));
    }
    out
}

/// Truth transition drawn from the family. Interpolated models (and every
/// model in contraction mode) keep their density-free rows as
/// `anchor * common_h + (1 - anchor) * free`; only `free` is returned so that
/// perturbations never touch the common part.
struct Draft {
    family: TransitionFamily,
    /// Per-step common densities, flat `[h][s']`, contraction mode only.
    common: Option<Vec<f64>>,
    /// Free part of the density-free rows, before anchoring.
    free: Option<Vec<f64>>,
}

fn anchored(common: &[f64], free: &[f64], anchor: f64, spec: &ClassGenSpec) -> Vec<f64> {
    let n = spec.states;
    let rows_per_step = spec.states * spec.actions;
    let mut out = Vec::with_capacity(free.len());
    for (row, block) in free.chunks(n).enumerate() {
        let h = row / rows_per_step;
        let c = &common[h * n..(h + 1) * n];
        out.extend(block.iter().zip(c).map(|(f, cv)| anchor * cv + (1.0 - anchor) * f));
    }
    out
}

fn draw_truth<R: Rng + ?Sized>(spec: &ClassGenSpec, rng: &mut R) -> Draft {
    let (n, na, horizon) = (spec.states, spec.actions, spec.horizon);
    let rows = horizon * n * na;
    match spec.family {
        FamilyKind::DensityFree if !spec.contraction => {
            Draft { family: TransitionFamily::DensityFree { table: random_blocks(rows, n, rng) }, common: None, free: None }
        }
        FamilyKind::LowRank => {
            let d = spec.rank;
            Draft {
                family: TransitionFamily::LowRank {
                    d,
                    features: random_blocks(rows * n, d, rng),
                    psi: random_blocks(horizon * d, n, rng),
                },
                common: None,
                free: None,
            }
        }
        _ => {
            let common = random_blocks(horizon, n, rng);
            let free = random_blocks(rows, n, rng);
            let anchor = if spec.contraction { spec.anchor } else { 0.0 };
            let base = anchored(&common, &free, anchor, spec);
            let weight = if spec.family == FamilyKind::DensityFree { 0.0 } else { spec.kernel_weight };
            let family = if spec.family == FamilyKind::ConvexMixture && !spec.contraction {
                TransitionFamily::ConvexMixture { kernel: random_blocks(rows * n, n, rng) }
            } else {
                TransitionFamily::Interpolated { weight, base, kernel: random_blocks(rows * n, n, rng) }
            };
            Draft { family, common: Some(common), free: Some(free) }
        }
    }
}

fn perturb<R: Rng + ?Sized>(truth: &Draft, spec: &ClassGenSpec, rng: &mut R) -> TransitionFamily {
    let n = spec.states;
    let scale = spec.perturbation;
    match &truth.family {
        TransitionFamily::DensityFree { table } => {
            TransitionFamily::DensityFree { table: perturb_blocks(table, n, scale, rng) }
        }
        TransitionFamily::ConvexMixture { kernel } => {
            TransitionFamily::ConvexMixture { kernel: perturb_blocks(kernel, n, scale, rng) }
        }
        TransitionFamily::Interpolated { weight, kernel, .. } => {
            let common = truth.common.as_ref().expect("interpolated drafts carry their common part");
            let free = perturb_blocks(truth.free.as_ref().expect("and their free part"), n, scale, rng);
            let anchor = if spec.contraction { spec.anchor } else { 0.0 };
            TransitionFamily::Interpolated {
                weight: *weight,
                base: anchored(common, &free, anchor, spec),
                kernel: perturb_blocks(kernel, n, scale, rng),
            }
        }
        TransitionFamily::LowRank { d, features, psi } => TransitionFamily::LowRank {
            d: *d,
            features: perturb_blocks(features, *d, scale, rng),
            psi: perturb_blocks(psi, n, scale, rng),
        },
        TransitionFamily::GaussianMean { .. } => unreachable!("generator never draws gaussian models"),
    }
}

fn shared_reward<R: Rng + ?Sized>(spec: &ClassGenSpec, rng: &mut R) -> RewardFamily {
    let cap = 1.0 / spec.horizon as f64;
    let rows = spec.horizon * spec.states * spec.actions;
    let r0 = (0..rows).map(|_| rng.random::<f64>() * cap).collect();
    let c = spec.reward_coupling * cap;
    let r1 = (0..rows * spec.states).map(|_| if c > 0.0 { rng.random_range(-c..=c) } else { 0.0 }).collect();
    RewardFamily { r0, r1 }
}

/// Draws a truth from the requested family and `size - 1` perturbations of it;
/// the truth is placed at a uniformly random index. Fully determined by `spec.seed`.
pub fn generate_class(spec: &ClassGenSpec) -> Result<ModelClass> {
    spec.validate()?;
    let mut rng = stream(spec.seed, Stream::ClassGen);
    let mu1 = Density::random(spec.states, &mut rng);
    let reward = shared_reward(spec, &mut rng);
    let mut last_reason = String::new();
    for _attempt in 0..spec.max_retries.max(1) {
        let truth = draw_truth(spec, &mut rng);
        let mut families = Vec::with_capacity(spec.size);
        families.push(truth.family.clone());
        for _ in 1..spec.size {
            families.push(perturb(&truth, spec, &mut rng));
        }
        let truth_index = rng.random_range(0..spec.size);
        families.swap(0, truth_index);
        let mut models = Vec::with_capacity(spec.size);
        for (i, fam) in families.into_iter().enumerate() {
            let id = format!("{}-{}-{}", spec.family.name(), spec.seed, i);
            models.push(MeanFieldModel::new(
                id,
                spec.states,
                spec.actions,
                spec.horizon,
                mu1.clone(),
                fam,
                reward.clone(),
            )?);
        }
        match check_constraints(spec, &models, &mut rng)? {
            None => {
                let mut class = ModelClass::new(models, truth_index)?;
                class.family = spec.family.name().to_string();
                class.seed = Some(spec.seed);
                class.spec = Some(spec.clone());
                return Ok(class);
            }
            Some(reason) => last_reason = reason,
        }
    }
    Err(MfError::Generation(format!("gave up after {} attempts: {last_reason}", spec.max_retries.max(1))))
}

/// `None` when the class meets the requested constants, else the reason it does not.
fn check_constraints<R: Rng + ?Sized>(
    spec: &ClassGenSpec,
    models: &[MeanFieldModel],
    rng: &mut R,
) -> Result<Option<String>> {
    for m in models {
        if let Some((lo, hi)) = spec.target_lt {
            let lt = transition_lipschitz(m)?;
            if lt < lo || lt > hi {
                return Ok(Some(format!("L_T = {lt} outside [{lo}, {hi}]")));
            }
        }
        if spec.contraction {
            let certified = certified_gamma_bound(m)?;
            let sampled = sampled_gamma_lower(m, 500, rng)?;
            if certified >= 1.0 || sampled >= 1.0 {
                return Ok(Some(format!("contraction not certified (bound {certified}, sampled {sampled})")));
            }
        }
    }
    Ok(None)
}

/// Pairwise maximum TV between conditionals over `probe_count` random
/// densities, each evaluated at every `(h, s, a)`.
pub fn class_separation<R: Rng + ?Sized>(c: &ModelClass, probe_count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if !c.is_discrete() {
        return Err(MfError::UnsupportedFamily("gaussian_mean"));
    }
    if probe_count == 0 {
        return Err(MfError::Parameter("probe_count must be at least 1".into()));
    }
    let k = c.len();
    let (n, na, horizon) = (c.states(), c.actions(), c.horizon());
    let mut sep = vec![vec![0.0; k]; k];
    let probes: Vec<Vec<f64>> = (0..probe_count).map(|_| random_simplex(n, rng)).collect();
    let mut outs = vec![vec![0.0; n]; k];
    for mu in &probes {
        for h in 0..horizon {
            for s in 0..n {
                for a in 0..na {
                    for (m, out) in c.models().iter().zip(outs.iter_mut()) {
                        m.transition_into(h, s, a, mu, out);
                    }
                    for i in 0..k {
                        for j in i + 1..k {
                            let t = tv_unchecked(&outs[i], &outs[j]);
                            if t > sep[i][j] {
                                sep[i][j] = t;
                                sep[j][i] = t;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(sep)
}

/// Shape and noise scale of a Gaussian-mean class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianClassSpec {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub d: usize,
    pub sigma: f64,
}

/// A mean function `f(s, a, mu) = base[h][s][a] + sum_x mu(x) linear[h][s][a][x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFunction {
    pub base: Vec<f64>,
    pub linear: Vec<f64>,
}

impl MeanFunction {
    /// The same mean vector everywhere.
    pub fn constant(spec: &GaussianClassSpec, mean: &[f64]) -> Self {
        let rows = spec.horizon * spec.states * spec.actions;
        MeanFunction { base: mean.repeat(rows), linear: vec![0.0; rows * spec.states * spec.d] }
    }
}

/// Wraps Gaussian-mean models into a class for the eluder toolkit. The first
/// function is designated as the truth.
pub fn gaussian_mean_class(spec: &GaussianClassSpec, means: Vec<MeanFunction>) -> Result<ModelClass> {
    if !(spec.sigma > 0.0) {
        return Err(MfError::Parameter(format!("sigma must be positive, got {}", spec.sigma)));
    }
    let mu1 = Density::uniform(spec.states);
    let reward = RewardFamily::zero(spec.horizon, spec.states, spec.actions);
    let models = means
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            MeanFieldModel::new(
                format!("gaussian-{i}"),
                spec.states,
                spec.actions,
                spec.horizon,
                mu1.clone(),
                TransitionFamily::GaussianMean { d: spec.d, sigma: spec.sigma, mean_base: f.base, mean_linear: f.linear },
                reward.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    ModelClass::new(models, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::gaussian_hellinger;
    use crate::lipschitz::transition_lipschitz;
    use crate::seeding::{stream, Stream};

    #[test]
    fn singleton_class() {
        let spec = ClassGenSpec::new(3, 2, 2, 1, FamilyKind::ConvexMixture, 4);
        let c = generate_class(&spec).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.truth_index(), 0);
    }

    #[test]
    fn zero_perturbation_gives_identical_models() {
        let mut spec = ClassGenSpec::new(3, 2, 2, 4, FamilyKind::DensityFree, 9);
        spec.perturbation = 0.0;
        let c = generate_class(&spec).unwrap();
        let t = c.truth().transition();
        assert!(c.models().iter().all(|m| m.transition() == t));
        let mut rng = stream(1, Stream::Probes);
        let sep = class_separation(&c, 3, &mut rng).unwrap();
        assert!(sep.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let spec = ClassGenSpec::new(3, 2, 3, 8, FamilyKind::ConvexMixture, 2024);
        let a = generate_class(&spec).unwrap().to_json().unwrap();
        let b = generate_class(&spec).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let back = ModelClass::from_json(&a).unwrap();
        assert_eq!(back.to_json().unwrap(), a);
    }

    #[test]
    fn every_family_generates() {
        for fam in [FamilyKind::DensityFree, FamilyKind::ConvexMixture, FamilyKind::Interpolated, FamilyKind::LowRank] {
            let spec = ClassGenSpec::new(3, 2, 3, 5, fam, 7);
            let c = generate_class(&spec).unwrap();
            assert_eq!(c.len(), 5);
            assert!(c.truth_index() < 5);
            for m in c.models() {
                assert_eq!(m.reward(), c.truth().reward());
            }
        }
    }

    #[test]
    fn contraction_mode_certifies() {
        let mut spec = ClassGenSpec::new(3, 2, 3, 8, FamilyKind::ConvexMixture, 17);
        spec.contraction = true;
        let c = generate_class(&spec).unwrap();
        for m in c.models() {
            assert!(certified_gamma_bound(m).unwrap() < 1.0);
            assert!(transition_lipschitz(m).unwrap() <= spec.kernel_weight + 1e-12);
        }
        spec.kernel_weight = 0.5;
        assert!(generate_class(&spec).is_err());
    }

    #[test]
    fn impossible_lt_range_fails_loudly() {
        let mut spec = ClassGenSpec::new(3, 2, 2, 3, FamilyKind::ConvexMixture, 3);
        spec.target_lt = Some((0.0, 1e-6));
        spec.max_retries = 3;
        assert!(matches!(generate_class(&spec), Err(MfError::Generation(_))));
    }

    #[test]
    fn separation_single_cell_gap() {
        // Two density-free models that differ only at (h=1, s=0, a=1).
        let (n, na, horizon) = (2, 2, 2);
        let table = vec![0.5; horizon * n * na * n];
        let mut other = table.clone();
        let row = (1 * n + 0) * na + 1;
        other[row * n] = 0.8;
        other[row * n + 1] = 0.2;
        let mk = |t: Vec<f64>| {
            MeanFieldModel::new(
                "x",
                n,
                na,
                horizon,
                Density::uniform(n),
                TransitionFamily::DensityFree { table: t },
                RewardFamily::zero(horizon, n, na),
            )
            .unwrap()
        };
        let c = ModelClass::new(vec![mk(table), mk(other)], 0).unwrap();
        let mut rng = stream(2, Stream::Probes);
        let sep = class_separation(&c, 2, &mut rng).unwrap();
        assert!((sep[0][1] - 0.3).abs() < 1e-15);
        assert_eq!(sep[0][1], sep[1][0]);
        assert_eq!(sep[0][0], 0.0);
    }

    #[test]
    fn gaussian_class_examples() {
        let spec = GaussianClassSpec { states: 2, actions: 1, horizon: 1, d: 1, sigma: 0.5 };
        let one = gaussian_mean_class(&spec, vec![MeanFunction::constant(&spec, &[0.0])]).unwrap();
        assert_eq!(one.len(), 1);
        let two = gaussian_mean_class(
            &spec,
            vec![MeanFunction::constant(&spec, &[0.0]), MeanFunction::constant(&spec, &[4.0 * spec.sigma])],
        )
        .unwrap();
        let mu = Density::uniform(2);
        let f = two.models()[0].gaussian_mean(0, 1, 0, &mu).unwrap();
        let g = two.models()[1].gaussian_mean(0, 1, 0, &mu).unwrap();
        let h = gaussian_hellinger(&f, &g, spec.sigma).unwrap();
        assert!((h - (1.0 - (-2.0f64).exp()).sqrt()).abs() < 1e-12);
        let bad = GaussianClassSpec { sigma: 0.0, ..spec };
        assert!(gaussian_mean_class(&bad, vec![]).is_err());
    }
}

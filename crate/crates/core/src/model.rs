//! Mean-field MDP models: transition families, the (known) reward family and
//! the JSON document format.
//!
//! Steps are 0-based throughout the API (`h in 0..H`). All tables are flat and
//! row-major; shapes are documented per variant.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::Density;
use crate::error::{MfError, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Parameterized transition kernels `P_h(. | s, a, mu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum TransitionFamily {
    /// `table[h][s][a][s']`, independent of the population.
    DensityFree { table: Vec<f64> },
    /// `kernel[h][s][a][x][s']`; `P = sum_x mu(x) K_x`.
    ConvexMixture { kernel: Vec<f64> },
    /// `(1 - weight) * base + weight * kernel`, shapes as above.
    Interpolated { weight: f64, base: Vec<f64>, kernel: Vec<f64> },
    /// `features[h][s][a][x][j]` are points of the `d`-simplex, so the feature map
    /// `phi(s, a, mu) = sum_x mu(x) features[..][x]` is affine in `mu` and
    /// simplex-valued. `psi[h][j][s']` are densities. `P = sum_j phi_j psi_j`.
    LowRank { d: usize, features: Vec<f64>, psi: Vec<f64> },
    /// Gaussian next-state with mean `mean_base[h][s][a][..] + sum_x mu(x) mean_linear[h][s][a][x][..]`
    /// in `R^d` and covariance `sigma^2 I`. Only usable by the eluder toolkit.
    GaussianMean { d: usize, sigma: f64, mean_base: Vec<f64>, mean_linear: Vec<f64> },
}

impl TransitionFamily {
    pub fn name(&self) -> &'static str {
        match self {
            TransitionFamily::DensityFree { .. } => "density_free",
            TransitionFamily::ConvexMixture { .. } => "convex_mixture",
            TransitionFamily::Interpolated { .. } => "interpolated",
            TransitionFamily::LowRank { .. } => "low_rank",
            TransitionFamily::GaussianMean { .. } => "gaussian_mean",
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, TransitionFamily::GaussianMean { .. })
    }
}

/// `r_h(s, a, mu) = clip(r0[h][s][a] + <r1[h][s][a][..], mu>, 0, 1/H)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardFamily {
    #[serde(rename = "R0")]
    pub r0: Vec<f64>,
    #[serde(rename = "R1")]
    pub r1: Vec<f64>,
}

impl RewardFamily {
    pub fn zero(horizon: usize, states: usize, actions: usize) -> Self {
        RewardFamily { r0: vec![0.0; horizon * states * actions], r1: vec![0.0; horizon * states * actions * states] }
    }

    /// Population-independent reward table `r0[h][s][a]`.
    pub fn constant(r0: Vec<f64>, states: usize) -> Self {
        let r1 = vec![0.0; r0.len() * states];
        RewardFamily { r0, r1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct MeanFieldModel {
    id: String,
    states: usize,
    actions: usize,
    horizon: usize,
    mu1: Density,
    transition: TransitionFamily,
    reward: RewardFamily,
    fingerprint: [u8; 32],
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    schema_version: u32,
    id: String,
    #[serde(rename = "S")]
    states: usize,
    #[serde(rename = "A")]
    actions: usize,
    #[serde(rename = "H")]
    horizon: usize,
    mu1: Density,
    transition: TransitionFamily,
    reward: RewardFamily,
}

impl TryFrom<ModelDoc> for MeanFieldModel {
    type Error = MfError;
    fn try_from(d: ModelDoc) -> Result<Self> {
        if d.schema_version != MODEL_SCHEMA_VERSION {
            return Err(MfError::Serde(format!("unsupported model schema_version {}", d.schema_version)));
        }
        MeanFieldModel::new(d.id, d.states, d.actions, d.horizon, d.mu1, d.transition, d.reward)
    }
}

impl From<MeanFieldModel> for ModelDoc {
    fn from(m: MeanFieldModel) -> Self {
        ModelDoc {
            schema_version: MODEL_SCHEMA_VERSION,
            id: m.id,
            states: m.states,
            actions: m.actions,
            horizon: m.horizon,
            mu1: m.mu1,
            transition: m.transition,
            reward: m.reward,
        }
    }
}

fn expect_len(what: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(MfError::Dimension(format!("{what}: expected {len} entries, got {}", v.len())));
    }
    Ok(())
}

/// Validates (and renormalizes) every consecutive block of `width` entries as a density.
fn normalize_blocks(what: &str, v: &mut [f64], width: usize) -> Result<()> {
    for block in v.chunks_mut(width) {
        let d = Density::new(block.to_vec())
            .map_err(|e| MfError::InvalidModel(format!("{what}: {e}")))?;
        block.copy_from_slice(d.probs());
    }
    Ok(())
}

impl MeanFieldModel {
    pub fn new(
        id: impl Into<String>,
        states: usize,
        actions: usize,
        horizon: usize,
        mu1: Density,
        mut transition: TransitionFamily,
        reward: RewardFamily,
    ) -> Result<Self> {
        if states == 0 || actions == 0 || horizon == 0 {
            return Err(MfError::Dimension("S, A and H must be positive".into()));
        }
        if mu1.len() != states {
            return Err(MfError::Dimension(format!("mu1 has {} entries, S = {states}", mu1.len())));
        }
        let hsa = horizon * states * actions;
        match &mut transition {
            TransitionFamily::DensityFree { table } => {
                expect_len("table", table, hsa * states)?;
                normalize_blocks("table", table, states)?;
            }
            TransitionFamily::ConvexMixture { kernel } => {
                expect_len("kernel", kernel, hsa * states * states)?;
                normalize_blocks("kernel", kernel, states)?;
            }
            TransitionFamily::Interpolated { weight, base, kernel } => {
                if !(0.0..=1.0).contains(weight) {
                    return Err(MfError::InvalidModel(format!("weight {weight} outside [0, 1]")));
                }
                expect_len("base", base, hsa * states)?;
                expect_len("kernel", kernel, hsa * states * states)?;
                normalize_blocks("base", base, states)?;
                normalize_blocks("kernel", kernel, states)?;
            }
            TransitionFamily::LowRank { d, features, psi } => {
                if *d == 0 {
                    return Err(MfError::Dimension("low-rank dimension must be positive".into()));
                }
                expect_len("features", features, hsa * states * *d)?;
                expect_len("psi", psi, horizon * *d * states)?;
                normalize_blocks("features", features, *d)?;
                normalize_blocks("psi", psi, states)?;
            }
            TransitionFamily::GaussianMean { d, sigma, mean_base, mean_linear } => {
                if !(*sigma > 0.0) {
                    return Err(MfError::Parameter(format!("sigma must be positive, got {sigma}")));
                }
                expect_len("mean_base", mean_base, hsa * *d)?;
                expect_len("mean_linear", mean_linear, hsa * states * *d)?;
                if mean_base.iter().chain(mean_linear.iter()).any(|x| !x.is_finite()) {
                    return Err(MfError::InvalidModel("non-finite mean coefficient".into()));
                }
            }
        }
        expect_len("R0", &reward.r0, hsa)?;
        expect_len("R1", &reward.r1, hsa * states)?;
        let cap = 1.0 / horizon as f64;
        if reward.r0.iter().any(|r| !(-1e-12..=cap + 1e-12).contains(r)) {
            return Err(MfError::InvalidModel(format!("R0 entries must lie in [0, {cap}]")));
        }
        if reward.r1.iter().any(|r| !r.is_finite()) {
            return Err(MfError::InvalidModel("non-finite R1 entry".into()));
        }
        let mut model = MeanFieldModel {
            id: id.into(),
            states,
            actions,
            horizon,
            mu1,
            transition,
            reward,
            fingerprint: [0; 32],
        };
        model.fingerprint = model.content_hash();
        Ok(model)
    }

    fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for n in [self.states, self.actions, self.horizon] {
            h.update((n as u64).to_le_bytes());
        }
        let mut put = |v: &[f64]| {
            h.update((v.len() as u64).to_le_bytes());
            for x in v {
                h.update(x.to_bits().to_le_bytes());
            }
        };
        put(self.mu1.probs());
        match &self.transition {
            TransitionFamily::DensityFree { table } => put(table),
            TransitionFamily::ConvexMixture { kernel } => put(kernel),
            TransitionFamily::Interpolated { weight, base, kernel } => {
                put(&[*weight]);
                put(base);
                put(kernel);
            }
            TransitionFamily::LowRank { d, features, psi } => {
                put(&[*d as f64]);
                put(features);
                put(psi);
            }
            TransitionFamily::GaussianMean { d, sigma, mean_base, mean_linear } => {
                put(&[*d as f64, *sigma]);
                put(mean_base);
                put(mean_linear);
            }
        }
        put(&self.reward.r0);
        put(&self.reward.r1);
        h.update(self.transition.name().as_bytes());
        h.finalize().into()
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn mu1(&self) -> &Density {
        &self.mu1
    }

    pub fn transition(&self) -> &TransitionFamily {
        &self.transition
    }

    pub fn reward(&self) -> &RewardFamily {
        &self.reward
    }

    /// Hash of the model contents (not the id); used as a cache key.
    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn same_shape(&self, other: &MeanFieldModel) -> bool {
        self.states == other.states && self.actions == other.actions && self.horizon == other.horizon
    }

    pub(crate) fn require_discrete(&self) -> Result<()> {
        if self.transition.is_discrete() {
            Ok(())
        } else {
            Err(MfError::UnsupportedFamily(self.transition.name()))
        }
    }

    fn check_indices(&self, h: usize, s: usize, a: usize, mu: &[f64]) -> Result<()> {
        if h >= self.horizon {
            return Err(MfError::Index(format!("step {h} with H = {}", self.horizon)));
        }
        if s >= self.states {
            return Err(MfError::Index(format!("state {s} with S = {}", self.states)));
        }
        if a >= self.actions {
            return Err(MfError::Index(format!("action {a} with A = {}", self.actions)));
        }
        if mu.len() != self.states {
            return Err(MfError::Dimension(format!("mu has {} entries, S = {}", mu.len(), self.states)));
        }
        Ok(())
    }

    /// `P_h(. | s, a, mu)` for discrete families.
    pub fn transition_eval(&self, h: usize, s: usize, a: usize, mu: &Density) -> Result<Density> {
        self.require_discrete()?;
        self.check_indices(h, s, a, mu.probs())?;
        let mut out = vec![0.0; self.states];
        self.transition_into(h, s, a, mu.probs(), &mut out);
        Density::new(out)
    }

    /// Unchecked kernel evaluation into `out` (length S). Discrete families only.
    pub(crate) fn transition_into(&self, h: usize, s: usize, a: usize, mu: &[f64], out: &mut [f64]) {
        let n = self.states;
        let row = (h * n + s) * self.actions + a;
        out.iter_mut().for_each(|x| *x = 0.0);
        match &self.transition {
            TransitionFamily::DensityFree { table } => out.copy_from_slice(&table[row * n..(row + 1) * n]),
            TransitionFamily::ConvexMixture { kernel } => mix_kernel(kernel, row, n, mu, 1.0, out),
            TransitionFamily::Interpolated { weight, base, kernel } => {
                let w = *weight;
                for (o, b) in out.iter_mut().zip(&base[row * n..(row + 1) * n]) {
                    *o = (1.0 - w) * b;
                }
                if w > 0.0 {
                    mix_kernel(kernel, row, n, mu, w, out);
                }
            }
            TransitionFamily::LowRank { d, features, psi } => {
                let d = *d;
                let mut phi = vec![0.0; d];
                for (x, &mx) in mu.iter().enumerate() {
                    if mx == 0.0 {
                        continue;
                    }
                    let f = &features[(row * n + x) * d..(row * n + x + 1) * d];
                    for (p, fj) in phi.iter_mut().zip(f) {
                        *p += mx * fj;
                    }
                }
                for (j, &pj) in phi.iter().enumerate() {
                    let col = &psi[(h * d + j) * n..(h * d + j + 1) * n];
                    for (o, c) in out.iter_mut().zip(col) {
                        *o += pj * c;
                    }
                }
            }
            TransitionFamily::GaussianMean { .. } => unreachable!("discrete families only"),
        }
    }

    /// Full step kernel `P_h[s][a][s']` at population `mu`, flat S*A*S.
    pub fn step_kernel(&self, h: usize, mu: &[f64]) -> Vec<f64> {
        let n = self.states;
        let mut out = vec![0.0; n * self.actions * n];
        for (sa, chunk) in out.chunks_mut(n).enumerate() {
            self.transition_into(h, sa / self.actions, sa % self.actions, mu, chunk);
        }
        out
    }

    /// Gaussian mean vector `f_h(s, a, mu)`.
    pub fn gaussian_mean(&self, h: usize, s: usize, a: usize, mu: &Density) -> Result<Vec<f64>> {
        let TransitionFamily::GaussianMean { d, mean_base, mean_linear, .. } = &self.transition else {
            return Err(MfError::UnsupportedFamily(self.transition.name()));
        };
        self.check_indices(h, s, a, mu.probs())?;
        let d = *d;
        let row = (h * self.states + s) * self.actions + a;
        let mut m = mean_base[row * d..(row + 1) * d].to_vec();
        for (x, &mx) in mu.probs().iter().enumerate() {
            let lin = &mean_linear[(row * self.states + x) * d..(row * self.states + x + 1) * d];
            for (mi, li) in m.iter_mut().zip(lin) {
                *mi += mx * li;
            }
        }
        Ok(m)
    }

    pub fn gaussian_sigma(&self) -> Option<f64> {
        match &self.transition {
            TransitionFamily::GaussianMean { sigma, .. } => Some(*sigma),
            _ => None,
        }
    }

    pub fn reward_eval(&self, h: usize, s: usize, a: usize, mu: &Density) -> Result<f64> {
        self.check_indices(h, s, a, mu.probs())?;
        Ok(self.reward_unchecked(h, s, a, mu.probs()))
    }

    #[inline]
    pub(crate) fn reward_unchecked(&self, h: usize, s: usize, a: usize, mu: &[f64]) -> f64 {
        let row = (h * self.states + s) * self.actions + a;
        let lin = &self.reward.r1[row * self.states..(row + 1) * self.states];
        let v = self.reward.r0[row] + lin.iter().zip(mu).map(|(r, m)| r * m).sum::<f64>();
        v.clamp(0.0, 1.0 / self.horizon as f64)
    }

    /// Reward table `r_h[s][a]` at population `mu`, flat S*A.
    pub fn step_reward(&self, h: usize, mu: &[f64]) -> Vec<f64> {
        (0..self.states * self.actions)
            .map(|sa| self.reward_unchecked(h, sa / self.actions, sa % self.actions, mu))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| MfError::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| MfError::Serde(e.to_string()))
    }
}

/// `out += scale * sum_x mu(x) kernel[row][x][..]`.
#[inline]
fn mix_kernel(kernel: &[f64], row: usize, n: usize, mu: &[f64], scale: f64, out: &mut [f64]) {
    for (x, &mx) in mu.iter().enumerate() {
        if mx == 0.0 {
            continue;
        }
        let w = scale * mx;
        let col = &kernel[(row * n + x) * n..(row * n + x + 1) * n];
        for (o, c) in out.iter_mut().zip(col) {
            *o += w * c;
        }
    }
}

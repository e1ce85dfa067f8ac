use std::fmt;
use std::path::{Path, PathBuf};

use mfrl_core::classes::{generate_class, ClassGenSpec, ModelClass};
use mfrl_core::eluder::ProbeSpec;
use mfrl_core::learner::{InitialPolicy, MfcConfig, MfgConfig};
use mfrl_core::planning::{NeParams, PlannerBudget};
use serde::{Deserialize, Serialize};

use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mfc,
    Mfg,
    Eluder,
    Bounds,
    Ne,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Mfc => "mfc",
            Mode::Mfg => "mfg",
            Mode::Eluder => "eluder",
            Mode::Bounds => "bounds",
            Mode::Ne => "ne",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassSource {
    /// Serialized class; relative paths resolve against the config's directory.
    File(PathBuf),
    Generate(ClassGenSpec),
}

/// Validation failure pointing at a line of the config text (1-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "one")]
    pub schema_version: u32,
    /// May be left out when the CLI subcommand fixes the mode.
    #[serde(default)]
    pub mode: Option<Mode>,
    pub class: ClassSource,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    #[serde(rename = "K", default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub ne: NeParams,
    #[serde(default)]
    pub planner: PlannerBudget,
    #[serde(default)]
    pub initial: InitialPolicy,
    #[serde(default)]
    pub probes: ProbeSpec,
    /// Eluder mode fails if any replicate's estimate exceeds this.
    #[serde(default)]
    pub max_dim: Option<usize>,
    /// Fill the `wallclock_ms` column; off by default since timings break byte equality.
    #[serde(default)]
    pub record_wallclock: bool,
    #[serde(skip)]
    text: String,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// First line mentioning `"key"`, or line 1.
fn key_line(text: &str, key: &str) -> usize {
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&quoted)).map_or(1, |i| i + 1)
}

fn unit_interval(x: Option<f64>) -> bool {
    x.is_some_and(|v| v > 0.0 && v < 1.0)
}

impl ExperimentConfig {
    /// Parses JSON text; `base_dir` anchors relative class paths.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| ConfigError { line: e.line().max(1), message: e.to_string() })?;
        cfg.text = text.to_string();
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { line: 0, message: format!("cannot read {}: {e}", path.display()) })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    fn error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError { line: key_line(&self.text, key), message: message.into() }
    }

    /// Settles the mode against the one requested by the caller.
    pub fn resolve_mode(&mut self, requested: Option<Mode>) -> Result<Mode, ConfigError> {
        match (self.mode, requested) {
            (Some(a), Some(b)) if a != b => {
                Err(self.error("mode", format!("config mode `{}` does not match `{}`", a.name(), b.name())))
            }
            (Some(m), _) | (None, Some(m)) => {
                self.mode = Some(m);
                Ok(m)
            }
            (None, None) => Err(self.error("mode", "missing field `mode`")),
        }
    }

    pub fn mode(&self) -> Option<Mode> {
        self.mode
    }

    /// Mode-specific checks. Requires a resolved mode.
    pub fn validate(&self) -> Result<Mode, ConfigError> {
        let Some(mode) = self.mode else {
            return Err(self.error("mode", "missing field `mode`"));
        };
        if self.schema_version != SCHEMA_VERSION {
            return Err(self.error("schema_version", format!("unsupported schema_version {}", self.schema_version)));
        }
        if self.seeds.is_empty() {
            return Err(self.error("seeds", "`seeds` must be a nonempty list"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(self.error("seeds", "`seeds` contains duplicates"));
        }
        let need_k = || match self.iterations {
            Some(k) if k > 0 => Ok(()),
            Some(_) => Err(self.error("K", "`K` must be positive")),
            None => Err(self.error("mode", format!("mode `{}` requires `K`", mode.name()))),
        };
        let need_delta = || {
            if unit_interval(self.delta) {
                Ok(())
            } else if self.delta.is_none() {
                Err(self.error("mode", format!("mode `{}` requires `delta`", mode.name())))
            } else {
                Err(self.error("delta", "`delta` must lie in (0, 1)"))
            }
        };
        match mode {
            Mode::Mfc => {
                need_k()?;
                need_delta()?;
                if !unit_interval(self.epsilon) {
                    return Err(self.error("epsilon", "mode `mfc` requires `epsilon` in (0, 1)"));
                }
            }
            Mode::Mfg => {
                need_k()?;
                need_delta()?;
                self.ne.validate().map_err(|e| self.error("ne", e.to_string()))?;
            }
            Mode::Eluder => {
                if !self.alpha.is_some_and(|a| a >= 1.0 && a.is_finite()) {
                    return Err(self.error("alpha", "mode `eluder` requires `alpha` >= 1"));
                }
                if !self.epsilon.is_some_and(|e| e > 0.0 && e.is_finite()) {
                    return Err(self.error("epsilon", "mode `eluder` requires a positive `epsilon`"));
                }
            }
            Mode::Bounds => {}
            Mode::Ne => self.ne.validate().map_err(|e| self.error("ne", e.to_string()))?,
        }
        Ok(mode)
    }

    /// Loads or generates the class, with errors anchored at the `class` entry.
    pub fn load_class(&self) -> Result<ModelClass, ConfigError> {
        let class = match &self.class {
            ClassSource::File(path) => {
                let path = if path.is_absolute() { path.clone() } else { self.base_dir.join(path) };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| self.error("file", format!("cannot read class {}: {e}", path.display())))?;
                ModelClass::from_json(&text).map_err(|e| self.error("file", e.to_string()))?
            }
            ClassSource::Generate(spec) => {
                spec.validate().map_err(|e| self.error("generate", e.to_string()))?;
                generate_class(spec).map_err(|e| self.error("generate", e.to_string()))?
            }
        };
        let needs_discrete = !matches!(self.mode, Some(Mode::Eluder));
        if needs_discrete && !class.is_discrete() {
            return Err(self.error("class", "this mode needs a class with discrete transitions"));
        }
        Ok(class)
    }

    /// Replaces the replicate seeds with a single one.
    pub fn override_seed(&mut self, seed: u64) {
        self.seeds = vec![seed];
    }

    pub fn mfc(&self) -> MfcConfig {
        MfcConfig {
            iterations: self.iterations.unwrap_or(0),
            delta: self.delta.unwrap_or(f64::NAN),
            epsilon: self.epsilon.unwrap_or(f64::NAN),
            planner: self.planner,
            initial: self.initial,
        }
    }

    pub fn mfg(&self) -> MfgConfig {
        MfgConfig {
            iterations: self.iterations.unwrap_or(0),
            delta: self.delta.unwrap_or(f64::NAN),
            ne: self.ne,
            initial: self.initial,
        }
    }

    /// Canonical JSON of everything that affects results. The output
    /// directory is left out.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
  "mode": "mfg",
  "class": {"generate": {"S": 2, "A": 2, "H": 2, "size": 2, "family": "convex_mixture", "perturbation": 0.5, "seed": 1}},
  "seeds": [1, 2],
  "K": 5,
  "delta": 0.1
}"#;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::parse(text, Path::new("."))
    }

    #[test]
    fn minimal_mfg_validates() {
        let cfg = parse(BASE).unwrap();
        assert_eq!(cfg.validate().unwrap(), Mode::Mfg);
        assert_eq!(cfg.load_class().unwrap().len(), 2);
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = parse("{\n  \"mode\": \"mfg\",\n  \"seeds\": [1,,]\n}").unwrap_err();
        assert_eq!(err.line, 3);
    }

    #[test]
    fn unknown_field_rejected() {
        let text = BASE.replace("\"K\": 5", "\"K\": 5,\n  \"bogus\": 1");
        assert!(parse(&text).is_err());
    }

    #[test]
    fn missing_delta_points_at_mode() {
        let text = BASE.replace(",\n  \"delta\": 0.1", "");
        let err = parse(&text).unwrap().validate().unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("delta"));
    }

    #[test]
    fn empty_seeds_rejected_on_their_line() {
        let err = parse(&BASE.replace("[1, 2]", "[]")).unwrap().validate().unwrap_err();
        assert_eq!(err.line, 4);
    }

    #[test]
    fn bad_delta_points_at_delta() {
        let err = parse(&BASE.replace("0.1", "1.5")).unwrap().validate().unwrap_err();
        assert_eq!(err.line, 6);
    }

    #[test]
    fn mode_conflict() {
        let mut cfg = parse(BASE).unwrap();
        assert_eq!(cfg.resolve_mode(Some(Mode::Mfg)).unwrap(), Mode::Mfg);
        assert!(cfg.resolve_mode(Some(Mode::Mfc)).is_err());
    }

    #[test]
    fn out_dir_not_hashed() {
        let a = parse(BASE).unwrap();
        let b = parse(&BASE.replace("\"K\": 5", "\"K\": 5,\n  \"out_dir\": \"elsewhere\"")).unwrap();
        assert_eq!(a.canonical_json(), b.canonical_json());
    }
}

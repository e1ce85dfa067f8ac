use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mfrl_core::classes::ModelClass;
use mfrl_core::eluder::{mf_mbed, MbedRow};
use mfrl_core::learner::{run_mfc, run_mfg, RunOutcome};
use mfrl_core::planning::{bound_check_suite, contraction_certificate, ne_solve, BoundCheckReport, CheckStatus};
use mfrl_core::seeding::{stream, Stream};
use mfrl_core::{DensityFlow, Policy};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ClassSource, ExperimentConfig, Mode};
use crate::output::{
    aggregate_rows, long_rows, sha256_hex, to_json_bytes, write_file, CurvePoint, Manifest, Stat, TraceFile,
};
use crate::{HarnessError, SCHEMA_VERSION, TOOL_VERSION};

pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CLASS_FILE: &str = "class.json";

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub mode: Mode,
    pub out_dir: PathBuf,
    /// Files written, summary and manifest included.
    pub files: Vec<String>,
    /// False when a bounds, eluder or equilibrium check failed.
    pub checks_passed: bool,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.checks_passed {
            0
        } else {
            2
        }
    }
}

pub fn trace_file_name(seed: u64) -> String {
    format!("trace_seed{seed}.csv")
}

fn replicate_file_name(mode: Mode, seed: u64) -> String {
    format!("{}_seed{seed}.json", mode.name())
}

/// Validates `cfg`, runs every seed on a pool of `jobs` workers (0 picks the
/// default), then writes the summary and manifest into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<RunReport, HarnessError> {
    let mode = cfg.validate()?;
    let class = cfg.load_class()?;
    fs::create_dir_all(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| HarnessError::Pool(e.to_string()))?;
    let (mut files, summary, checks_passed) = pool.install(|| match mode {
        Mode::Mfc | Mode::Mfg => learn(cfg, mode, &class, out_dir),
        Mode::Eluder => eluder(cfg, &class, out_dir),
        Mode::Bounds => bounds(cfg, &class, out_dir),
        Mode::Ne => equilibria(cfg, &class, out_dir),
    })?;
    write_file(out_dir, SUMMARY_FILE, &summary)?;
    files.push(SUMMARY_FILE.to_string());
    files.sort();
    write_manifest(out_dir, mode.name(), cfg, files.clone())?;
    files.push(MANIFEST_FILE.to_string());
    Ok(RunReport { mode, out_dir: out_dir.to_path_buf(), files, checks_passed })
}

fn write_manifest(out_dir: &Path, mode: &str, cfg: &ExperimentConfig, files: Vec<String>) -> Result<(), HarnessError> {
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool: "mfrl".into(),
        tool_version: TOOL_VERSION.into(),
        mode: mode.into(),
        config_hash: sha256_hex(cfg.canonical_json().as_bytes()),
        seeds: cfg.seeds.clone(),
        files,
    };
    write_file(out_dir, MANIFEST_FILE, &to_json_bytes(&manifest)?)
}

type ModeOutput = (Vec<String>, Vec<u8>, bool);

#[derive(Serialize)]
struct LearnReplicate {
    seed: u64,
    file: String,
    returned_policy: Policy,
    selected_iteration: usize,
    final_metric: f64,
    trajectories_consumed: usize,
    truth_always_in_set: bool,
}

#[derive(Serialize)]
struct LearnSummary {
    schema_version: u32,
    mode: &'static str,
    tool_version: &'static str,
    #[serde(rename = "K")]
    iterations: usize,
    replicates: Vec<LearnReplicate>,
    final_metric: Stat,
    trajectories_consumed: Stat,
    /// Fraction of replicates whose confidence sets held the true model at every iteration.
    coverage: f64,
    curves: BTreeMap<String, Vec<CurvePoint>>,
}

fn learn(cfg: &ExperimentConfig, mode: Mode, class: &ModelClass, out_dir: &Path) -> Result<ModeOutput, HarnessError> {
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<(RunOutcome, TraceFile), HarnessError> {
            let outcome = match mode {
                Mode::Mfc => run_mfc(class, &cfg.mfc(), seed)?,
                _ => run_mfg(class, &cfg.mfg(), seed)?,
            };
            let trace = TraceFile::from_trace(&outcome.trace, cfg.record_wallclock);
            write_file(out_dir, &trace_file_name(seed), &trace.to_csv()?)?;
            Ok((outcome, trace))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    let mut replicates = Vec::with_capacity(runs.len());
    for (outcome, trace) in runs {
        rows.extend(long_rows(&trace));
        replicates.push(LearnReplicate {
            seed: trace.seed,
            file: trace_file_name(trace.seed),
            truth_always_in_set: outcome.trace.iterations.iter().all(|it| it.truth_in_set),
            returned_policy: outcome.policy,
            selected_iteration: outcome.selected_iteration,
            final_metric: outcome.final_metric,
            trajectories_consumed: outcome.trace.trajectories,
        });
    }
    let by_seed = |f: fn(&LearnReplicate) -> f64| {
        let mut v: Vec<(u64, f64)> = replicates.iter().map(|r| (r.seed, f(r))).collect();
        v.sort_by_key(|&(s, _)| s);
        Stat::of(&v.into_iter().map(|(_, x)| x).collect::<Vec<_>>())
    };
    let covered = replicates.iter().filter(|r| r.truth_always_in_set).count();
    let summary = LearnSummary {
        schema_version: SCHEMA_VERSION,
        mode: mode.name(),
        tool_version: TOOL_VERSION,
        iterations: cfg.iterations.unwrap_or(0),
        final_metric: by_seed(|r| r.final_metric),
        trajectories_consumed: by_seed(|r| r.trajectories_consumed as f64),
        coverage: covered as f64 / replicates.len() as f64,
        curves: aggregate_rows(&rows),
        replicates,
    };
    let files = cfg.seeds.iter().map(|&s| trace_file_name(s)).collect();
    Ok((files, to_json_bytes(&summary)?, true))
}

#[derive(Serialize)]
struct EluderFile {
    schema_version: u32,
    per_h: Vec<MbedRow>,
    mf_mbed: usize,
    probes: usize,
    seed: u64,
}

#[derive(Serialize)]
struct EluderSummary {
    schema_version: u32,
    mode: &'static str,
    tool_version: &'static str,
    alpha: f64,
    epsilon: f64,
    max_dim: Option<usize>,
    replicates: Vec<EluderReplicate>,
    mf_mbed: Stat,
    passed: bool,
}

#[derive(Serialize)]
struct EluderReplicate {
    seed: u64,
    file: String,
    mf_mbed: usize,
}

fn eluder(cfg: &ExperimentConfig, class: &ModelClass, out_dir: &Path) -> Result<ModeOutput, HarnessError> {
    let (alpha, epsilon) = (cfg.alpha.unwrap_or(1.0), cfg.epsilon.unwrap_or(0.0));
    let replicates = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<EluderReplicate, HarnessError> {
            let mut spec = cfg.probes.clone();
            spec.seed = seed;
            let r = mf_mbed(class, alpha, epsilon, &spec)?;
            let file = replicate_file_name(Mode::Eluder, seed);
            let doc = EluderFile { schema_version: SCHEMA_VERSION, per_h: r.per_h, mf_mbed: r.mf_mbed, probes: r.probes, seed };
            write_file(out_dir, &file, &to_json_bytes(&doc)?)?;
            Ok(EluderReplicate { seed, file, mf_mbed: r.mf_mbed })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let passed = cfg.max_dim.is_none_or(|cap| replicates.iter().all(|r| r.mf_mbed <= cap));
    let dims: Vec<f64> = replicates.iter().map(|r| r.mf_mbed as f64).collect();
    let files = replicates.iter().map(|r| r.file.clone()).collect();
    let summary = EluderSummary {
        schema_version: SCHEMA_VERSION,
        mode: Mode::Eluder.name(),
        tool_version: TOOL_VERSION,
        alpha,
        epsilon,
        max_dim: cfg.max_dim,
        mf_mbed: Stat::of(&dims),
        replicates,
        passed,
    };
    Ok((files, to_json_bytes(&summary)?, passed))
}

#[derive(Serialize)]
struct PairReport {
    /// Index of the model compared with the truth.
    model: usize,
    all_passed: bool,
    report: BoundCheckReport,
}

#[derive(Serialize)]
struct BoundsFile {
    schema_version: u32,
    seed: u64,
    truth_index: usize,
    pairs: Vec<PairReport>,
}

#[derive(Default, Serialize)]
struct CheckTally {
    pass: usize,
    fail: usize,
    skipped: usize,
    min_slack: Option<f64>,
}

#[derive(Serialize)]
struct BoundsSummary {
    schema_version: u32,
    mode: &'static str,
    tool_version: &'static str,
    replicates: Vec<(u64, bool)>,
    checks: BTreeMap<String, CheckTally>,
    passed: bool,
}

/// Checks the truth against every other model (or itself in a singleton
/// class) under a random policy pair drawn per seed.
fn bounds(cfg: &ExperimentConfig, class: &ModelClass, out_dir: &Path) -> Result<ModeOutput, HarnessError> {
    let truth = class.truth();
    let (n, na, horizon) = (class.states(), class.actions(), class.horizon());
    let others: Vec<usize> = if class.len() == 1 {
        vec![class.truth_index()]
    } else {
        (0..class.len()).filter(|&i| i != class.truth_index()).collect()
    };
    let files = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<BoundsFile, HarnessError> {
            let mut rng = stream(seed, Stream::Policies);
            let pi = Policy::random(horizon, n, na, &mut rng);
            let pi_tilde = Policy::random(horizon, n, na, &mut rng);
            let mut pairs = Vec::with_capacity(others.len());
            for &j in &others {
                let other = &class.models()[j];
                let cert = contraction_certificate(truth, other)?;
                let report = bound_check_suite(truth, other, &pi, &pi_tilde, cert)?;
                pairs.push(PairReport { model: j, all_passed: report.all_passed(), report });
            }
            let doc = BoundsFile { schema_version: SCHEMA_VERSION, seed, truth_index: class.truth_index(), pairs };
            write_file(out_dir, &replicate_file_name(Mode::Bounds, seed), &to_json_bytes(&doc)?)?;
            Ok(doc)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut checks: BTreeMap<String, CheckTally> = BTreeMap::new();
    for pair in files.iter().flat_map(|f| &f.pairs) {
        for c in &pair.report.checks {
            let t = checks.entry(c.name.clone()).or_default();
            match c.status {
                CheckStatus::Pass => t.pass += 1,
                CheckStatus::Fail => t.fail += 1,
                CheckStatus::Skipped => t.skipped += 1,
            }
            if c.status != CheckStatus::Skipped {
                t.min_slack = Some(t.min_slack.map_or(c.slack, |m| m.min(c.slack)));
            }
        }
    }
    let replicates: Vec<(u64, bool)> = files.iter().map(|f| (f.seed, f.pairs.iter().all(|p| p.all_passed))).collect();
    let passed = replicates.iter().all(|&(_, ok)| ok);
    let summary = BoundsSummary {
        schema_version: SCHEMA_VERSION,
        mode: Mode::Bounds.name(),
        tool_version: TOOL_VERSION,
        replicates,
        checks,
        passed,
    };
    let names = cfg.seeds.iter().map(|&s| replicate_file_name(Mode::Bounds, s)).collect();
    Ok((names, to_json_bytes(&summary)?, passed))
}

#[derive(Serialize)]
struct NeFile {
    schema_version: u32,
    seed: u64,
    converged: bool,
    exploitability: f64,
    consistency_residual: f64,
    fixed_point_residual: f64,
    iterations: usize,
    restarts: usize,
    policy: Policy,
    flow: DensityFlow,
}

#[derive(Serialize)]
struct NeSummary {
    schema_version: u32,
    mode: &'static str,
    tool_version: &'static str,
    replicates: Vec<(u64, bool)>,
    exploitability: Stat,
    converged: usize,
    passed: bool,
}

/// Equilibrium of the true model per seed; a run that does not converge
/// counts as a failed check.
fn equilibria(cfg: &ExperimentConfig, class: &ModelClass, out_dir: &Path) -> Result<ModeOutput, HarnessError> {
    let docs = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<NeFile, HarnessError> {
            let r = ne_solve(class.truth(), &cfg.ne, &mut stream(seed, Stream::PlannerRestarts))?;
            let doc = NeFile {
                schema_version: SCHEMA_VERSION,
                seed,
                converged: r.converged,
                exploitability: r.exploitability,
                consistency_residual: r.consistency_residual,
                fixed_point_residual: r.fixed_point_residual,
                iterations: r.iterations,
                restarts: r.restarts,
                policy: r.policy,
                flow: r.flow,
            };
            write_file(out_dir, &replicate_file_name(Mode::Ne, seed), &to_json_bytes(&doc)?)?;
            Ok(doc)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let converged = docs.iter().filter(|d| d.converged).count();
    let summary = NeSummary {
        schema_version: SCHEMA_VERSION,
        mode: Mode::Ne.name(),
        tool_version: TOOL_VERSION,
        replicates: docs.iter().map(|d| (d.seed, d.converged)).collect(),
        exploitability: Stat::of(&docs.iter().map(|d| d.exploitability).collect::<Vec<_>>()),
        converged,
        passed: converged == docs.len(),
    };
    let names = cfg.seeds.iter().map(|&s| replicate_file_name(Mode::Ne, s)).collect();
    Ok((names, to_json_bytes(&summary)?, converged == docs.len()))
}

/// Generates the configured class and writes it as `class.json`. `seed`
/// replaces the generator seed when given.
pub fn gen_class(cfg: &ExperimentConfig, seed: Option<u64>, out_dir: &Path) -> Result<PathBuf, HarnessError> {
    let ClassSource::Generate(spec) = &cfg.class else {
        return Err(crate::config::ConfigError { line: 1, message: "gen-class needs a `generate` class source".into() }.into());
    };
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        let mut spec = spec.clone();
        spec.seed = s;
        cfg.class = ClassSource::Generate(spec);
    }
    let class = cfg.load_class()?;
    fs::create_dir_all(out_dir)?;
    let mut json = class.to_json()?.into_bytes();
    json.push(b'\n');
    write_file(out_dir, CLASS_FILE, &json)?;
    write_manifest(out_dir, "gen-class", &cfg, vec![CLASS_FILE.to_string()])?;
    Ok(out_dir.join(CLASS_FILE))
}

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mfrl_core::learner::{LearnerMode, RunTrace};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{HarnessError, SCHEMA_VERSION};

pub const TRACE_COLUMNS: [&str; 7] = [
    "k",
    "conf_set_size",
    "truth_in_set",
    "optimistic_value_or_gap",
    "true_eopt_or_ene",
    "ne_converged",
    "wallclock_ms",
];

/// Columns carried into the long format and the per-k summary curves.
pub const CURVE_METRICS: [&str; 4] = ["conf_set_size", "truth_in_set", "optimistic_value_or_gap", "true_eopt_or_ene"];

/// Finite reals with 17 significant digits, in exponent form.
pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// One row of a trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub conf_set_size: usize,
    pub truth_in_set: bool,
    pub optimistic: f64,
    pub true_metric: f64,
    pub ne_converged: Option<bool>,
    pub wallclock_ms: f64,
}

impl TraceRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "conf_set_size" => Some(self.conf_set_size as f64),
            "truth_in_set" => Some(f64::from(u8::from(self.truth_in_set))),
            "optimistic_value_or_gap" => Some(self.optimistic),
            "true_eopt_or_ene" => Some(self.true_metric),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub schema_version: u32,
    pub mode: String,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
}

impl TraceFile {
    pub fn from_trace(trace: &RunTrace, wallclock: bool) -> Self {
        let rows = trace
            .iterations
            .iter()
            .map(|it| TraceRow {
                k: it.k,
                conf_set_size: it.conf_set_size,
                truth_in_set: it.truth_in_set,
                optimistic: it.optimistic,
                true_metric: it.true_metric,
                ne_converged: it.ne_converged,
                wallclock_ms: if wallclock { it.elapsed_ms } else { 0.0 },
            })
            .collect();
        let mode = match trace.mode {
            LearnerMode::Mfc => "mfc",
            LearnerMode::Mfg => "mfg",
        };
        TraceFile { schema_version: SCHEMA_VERSION, mode: mode.into(), seed: trace.seed, rows }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let mut buf = format!("# schema_version={} mode={} seed={}\n", self.schema_version, self.mode, self.seed).into_bytes();
        {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
            w.write_record(TRACE_COLUMNS)?;
            for r in &self.rows {
                let converged = r.ne_converged.map_or(String::new(), |c| u8::from(c).to_string());
                w.write_record([
                    r.k.to_string(),
                    r.conf_set_size.to_string(),
                    u8::from(r.truth_in_set).to_string(),
                    fmt_real(r.optimistic),
                    fmt_real(r.true_metric),
                    converged,
                    fmt_real(r.wallclock_ms),
                ])?;
            }
            w.flush()?;
        }
        Ok(buf)
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        let (header, body) = text.split_once('\n').unwrap_or((&text, ""));
        let fields = parse_header(header).ok_or_else(|| HarnessError::Format(format!("{}: missing schema header", path.display())))?;
        let version = header_version(&fields, path)?;
        let mode = fields.get("mode").cloned().unwrap_or_default();
        let seed = fields
            .get("seed")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| HarnessError::Format(format!("{}: missing seed in header", path.display())))?;
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let headers = reader.headers()?.clone();
        if headers.iter().ne(TRACE_COLUMNS) {
            return Err(HarnessError::Format(format!("{}: unexpected columns", path.display())));
        }
        let bad = |what: &str| HarnessError::Format(format!("{}: bad {what}", path.display()));
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(TRACE_COLUMNS[i]));
            let int = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(TRACE_COLUMNS[i]));
            let flag = |i: usize| match &rec[i] {
                "0" => Ok(Some(false)),
                "1" => Ok(Some(true)),
                "" => Ok(None),
                _ => Err(bad(TRACE_COLUMNS[i])),
            };
            rows.push(TraceRow {
                k: int(0)?,
                conf_set_size: int(1)?,
                truth_in_set: flag(2)?.ok_or_else(|| bad("truth_in_set"))?,
                optimistic: num(3)?,
                true_metric: num(4)?,
                ne_converged: flag(5)?,
                wallclock_ms: num(6)?,
            });
        }
        Ok(TraceFile { schema_version: version, mode, seed, rows })
    }
}

/// `# key=value key=value` header line.
pub(crate) fn parse_header(line: &str) -> Option<BTreeMap<String, String>> {
    let rest = line.strip_prefix('#')?;
    let fields: BTreeMap<String, String> = rest
        .split_whitespace()
        .filter_map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    fields.contains_key("schema_version").then_some(fields)
}

pub(crate) fn header_version(fields: &BTreeMap<String, String>, path: &Path) -> Result<u32, HarnessError> {
    let raw = &fields["schema_version"];
    match raw.parse::<u32>() {
        Ok(SCHEMA_VERSION) => Ok(SCHEMA_VERSION),
        _ => Err(HarnessError::Version(format!("{}: unsupported schema_version {raw}", path.display()))),
    }
}

/// Mean and standard error of the mean (sample standard deviation over
/// `sqrt(n)`; zero for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, stderr, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Per-metric, per-k statistics over `(seed, k, metric, value)` rows.
/// Values are combined in increasing seed order.
pub fn aggregate_rows(rows: &[(u64, usize, String, f64)]) -> BTreeMap<String, Vec<CurvePoint>> {
    let mut groups: BTreeMap<(String, usize), Vec<(u64, f64)>> = BTreeMap::new();
    for (seed, k, metric, value) in rows {
        groups.entry((metric.clone(), *k)).or_default().push((*seed, *value));
    }
    let mut out: BTreeMap<String, Vec<CurvePoint>> = BTreeMap::new();
    for ((metric, k), mut vals) in groups {
        vals.sort_by_key(|&(s, _)| s);
        let v: Vec<f64> = vals.iter().map(|&(_, x)| x).collect();
        let s = Stat::of(&v);
        out.entry(metric).or_default().push(CurvePoint { k, mean: s.mean, stderr: s.stderr, n: s.n });
    }
    out
}

/// Long-format rows of one trace, metric-major within each k.
pub fn long_rows(trace: &TraceFile) -> Vec<(u64, usize, String, f64)> {
    let mut out = Vec::with_capacity(trace.rows.len() * CURVE_METRICS.len());
    for r in &trace.rows {
        for m in CURVE_METRICS {
            out.push((trace.seed, r.k, m.to_string(), r.metric(m).expect("known metric")));
        }
    }
    out
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, HarnessError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(dir.join(name), bytes)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub mode: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub files: Vec<String>,
}

use std::fs;
use std::path::Path;

use crate::output::{fmt_real, header_version, long_rows, parse_header, TraceFile};
use crate::{HarnessError, SCHEMA_VERSION};

pub const LONG_COLUMNS: [&str; 4] = ["seed", "k", "metric", "value"];

/// Concatenates trace files into a tidy `(seed, k, metric, value)` CSV.
/// Returns the number of data rows written.
pub fn emit_curves(traces: &[&Path], out: &Path) -> Result<usize, HarnessError> {
    let files = traces.iter().map(|p| TraceFile::read(p)).collect::<Result<Vec<_>, _>>()?;
    if let Some(first) = files.first() {
        if let Some(other) = files.iter().find(|f| f.schema_version != first.schema_version || f.mode != first.mode) {
            return Err(HarnessError::Version(format!(
                "traces disagree: schema_version {} mode {} against schema_version {} mode {}",
                first.schema_version, first.mode, other.schema_version, other.mode
            )));
        }
    }
    let mut buf = format!("# schema_version={SCHEMA_VERSION}\n").into_bytes();
    let mut count = 0;
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
        w.write_record(LONG_COLUMNS)?;
        for f in &files {
            for (seed, k, metric, value) in long_rows(f) {
                w.write_record([seed.to_string(), k.to_string(), metric, fmt_real(value)])?;
                count += 1;
            }
        }
        w.flush()?;
    }
    fs::write(out, buf)?;
    Ok(count)
}

/// Reads a long-format file back.
pub fn read_long(path: &Path) -> Result<Vec<(u64, usize, String, f64)>, HarnessError> {
    let text = fs::read_to_string(path)?;
    let (header, body) = text.split_once('\n').unwrap_or((&text, ""));
    let fields = parse_header(header).ok_or_else(|| HarnessError::Format(format!("{}: missing schema header", path.display())))?;
    header_version(&fields, path)?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    if reader.headers()?.iter().ne(LONG_COLUMNS) {
        return Err(HarnessError::Format(format!("{}: unexpected columns", path.display())));
    }
    let bad = || HarnessError::Format(format!("{}: malformed row", path.display()));
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        out.push((
            rec[0].parse().map_err(|_| bad())?,
            rec[1].parse().map_err(|_| bad())?,
            rec[2].to_string(),
            rec[3].parse().map_err(|_| bad())?,
        ));
    }
    Ok(out)
}

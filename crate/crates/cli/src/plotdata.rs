//! Tidy CSV slices of a metrics JSONL file: one `step,group,field,value` row
//! per value. Top-level fields have an empty group.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{HarnessError, Result};

fn cell(v: &Value) -> Option<String> {
    match v {
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

/// Writes the tidy rows for `fields` from the step records in `metrics` to
/// `out`. Fails if a field appears in no step record.
pub fn plotdata<W: Write>(metrics: &Path, fields: &[String], out: W) -> Result<usize> {
    if fields.is_empty() {
        return Err(HarnessError::Usage("plotdata needs at least one field".into()));
    }
    let file = std::fs::File::open(metrics).map_err(|e| HarnessError::io(metrics, e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "group", "field", "value"])?;
    let mut seen = vec![false; fields.len()];
    let mut rows = 0;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| HarnessError::io(metrics, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Value = serde_json::from_str(&line)?;
        if rec["record"] != "step" {
            continue;
        }
        let step = rec["step"].to_string();
        for (fi, field) in fields.iter().enumerate() {
            if let Some(v) = rec.get(field) {
                seen[fi] = true;
                if let Some(s) = cell(v) {
                    w.write_record([step.as_str(), "", field, &s])?;
                    rows += 1;
                }
            }
            if let Some(groups) = rec["groups"].as_object() {
                for (name, g) in groups {
                    if let Some(v) = g.get(field) {
                        seen[fi] = true;
                        if let Some(s) = cell(v) {
                            w.write_record([step.as_str(), name, field, &s])?;
                            rows += 1;
                        }
                    }
                }
            }
        }
    }
    w.flush().map_err(|e| HarnessError::io(metrics, e))?;
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(HarnessError::Usage(format!("field `{}` is not in any step record", fields[i])));
    }
    Ok(rows)
}

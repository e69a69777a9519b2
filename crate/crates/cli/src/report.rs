//! Report writing and pretty-printing: line-delimited JSON records plus a
//! derived human-readable summary table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::experiments::RunOutput;
use crate::{CliResult, Failure};

pub const TOOL_NAME: &str = "arealab";

pub fn tool_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Write `report.jsonl` (meta record, one record per sub-result, outcome
/// record) and a `summary.txt` rendering of the same records.
pub fn write(out_dir: &Path, resolved_config: &Value, output: &RunOutput) -> CliResult<PathBuf> {
    let mut records = Vec::with_capacity(output.records.len() + 2);
    records.push(serde_json::json!({
        "record": "meta",
        "tool": {"name": TOOL_NAME, "version": tool_version()},
        "config": resolved_config,
    }));
    records.extend(output.records.iter().cloned());
    records.push(serde_json::json!({
        "record": "outcome",
        "status": if output.violations.is_empty() { "ok" } else { "invariant_violation" },
        "violations": output.violations,
    }));

    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    let path = out_dir.join("report.jsonl");
    fs::write(&path, &text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;

    let summary_path = out_dir.join("summary.txt");
    fs::write(&summary_path, render(&records))
        .map_err(|e| Failure::Input(format!("{}: {e}", summary_path.display())))?;
    Ok(path)
}

/// Pretty-print an existing report file.
pub fn print(path: &Path) -> CliResult<()> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(raw)
            .map_err(|e| Failure::Input(format!("{} line {}: {e}", path.display(), i + 1)))?;
        records.push(v);
    }
    print!("{}", render(&records));
    Ok(())
}

fn render(records: &[Value]) -> String {
    let mut out = String::new();
    for rec in records {
        let Some(obj) = rec.as_object() else { continue };
        let name = obj.get("record").and_then(Value::as_str).unwrap_or("?");
        if name == "meta" {
            let tool = &obj.get("tool").cloned().unwrap_or(Value::Null);
            let cfg = obj.get("config").and_then(Value::as_object);
            let tn = tool.get("name").and_then(Value::as_str).unwrap_or("?");
            let tv = tool.get("version").and_then(Value::as_str).unwrap_or("?");
            writeln!(out, "tool      {tn} {tv}").unwrap();
            if let Some(cfg) = cfg {
                for key in ["kind", "seed", "threads", "out"] {
                    if let Some(v) = cfg.get(key) {
                        writeln!(out, "{key:<9} {}", compact(v)).unwrap();
                    }
                }
                if let Some(params) = cfg.get("params") {
                    writeln!(out, "params    {}", compact_deep(params)).unwrap();
                }
            }
            continue;
        }
        let mut parts = Vec::new();
        for (k, v) in obj {
            if k == "record" {
                continue;
            }
            parts.push(format!("{k}={}", compact(v)));
        }
        writeln!(out, "{name:<18} {}", parts.join("  ")).unwrap();
    }
    out
}

/// One value rendered short: long arrays collapse to their length.
fn compact(v: &Value) -> String {
    match v {
        Value::Array(a) if a.len() > 8 => format!("[{} values]", a.len()),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn compact_deep(v: &Value) -> String {
    match v {
        Value::Object(o) => {
            let parts: Vec<String> =
                o.iter().map(|(k, v)| format!("{k}={}", compact(v))).collect();
            parts.join("  ")
        }
        other => compact(other),
    }
}

//! JSON reports with an isolated `metadata` field, plus markdown summaries
//! rendered from the JSON.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::{json, Map, Value};

/// Writes `<dir>/<name>.json` and `<dir>/<name>.md`. Everything except the
/// top-level `metadata` object is a function of the inputs alone.
pub fn write_report(dir: &Path, name: &str, command: &str, body: &impl Serialize) -> anyhow::Result<PathBuf> {
    let mut value = serde_json::to_value(body)?;
    let Value::Object(map) = &mut value else {
        anyhow::bail!("report body for `{name}` is not a JSON object");
    };
    map.insert(
        "metadata".into(),
        json!({
            "command": command,
            "generated_at": chrono::Utc::now().to_rfc3339(),
            "version": env!("CARGO_PKG_VERSION"),
        }),
    );
    let json_path = dir.join(format!("{name}.json"));
    fs::write(&json_path, serde_json::to_string_pretty(&value)? + "\n")
        .with_context(|| format!("writing {}", json_path.display()))?;
    let md_path = dir.join(format!("{name}.md"));
    fs::write(&md_path, markdown(name, &value)).with_context(|| format!("writing {}", md_path.display()))?;
    Ok(json_path)
}

/// Drops the `metadata` field; what remains is reproducible.
#[cfg(test)]
pub fn strip_metadata(mut v: Value) -> Value {
    if let Value::Object(m) = &mut v {
        m.remove("metadata");
    }
    v
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some("n/a".into()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(match n.as_f64() {
            Some(x) if n.is_f64() => format!("{x:.4}"),
            _ => n.to_string(),
        }),
        Value::String(s) => Some(s.clone()),
        Value::Array(a) if a.iter().all(|x| !x.is_object() && !x.is_array()) && a.len() <= 16 => Some(format!(
            "[{}]",
            a.iter().filter_map(scalar).collect::<Vec<_>>().join(", ")
        )),
        _ => None,
    }
}

fn table(rows: &[Value]) -> Option<String> {
    let first = rows.first()?.as_object()?;
    let cols: Vec<&String> = first.keys().collect();
    let mut out = format!("| {} |\n|{}\n", cols.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(" | "), "---|".repeat(cols.len()));
    for r in rows {
        let r = r.as_object()?;
        let cells: Option<Vec<String>> = cols.iter().map(|c| r.get(*c).and_then(scalar)).collect();
        out += &format!("| {} |\n", cells?.join(" | "));
    }
    Some(out)
}

fn section(out: &mut String, depth: usize, map: &Map<String, Value>) {
    let mut nested = Vec::new();
    for (k, v) in map {
        if k == "metadata" {
            continue;
        }
        match scalar(v) {
            Some(s) => out.push_str(&format!("- **{k}**: {s}\n")),
            None => nested.push((k, v)),
        }
    }
    for (k, v) in nested {
        out.push_str(&format!("\n{} {k}\n\n", "#".repeat(depth + 1)));
        match v {
            Value::Object(m) => section(out, depth + 1, m),
            Value::Array(rows) if rows.len() <= 200 => match table(rows) {
                Some(t) => out.push_str(&t),
                None => out.push_str(&format!("{} entries (see JSON)\n", rows.len())),
            },
            Value::Array(rows) => out.push_str(&format!("{} entries (see JSON)\n", rows.len())),
            _ => {}
        }
    }
}

pub fn markdown(title: &str, v: &Value) -> String {
    let mut out = format!("# {title}\n\n");
    if let Value::Object(m) = v {
        section(&mut out, 1, m);
    }
    out
}

//! CSV and JSON emission with a schema-version header.

use anyhow::Context;
use batchbias::SCHEMA_VERSION;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// `# schema-version: N` followed by a headed CSV table.
pub fn csv_text<R: Serialize>(rows: &[R]) -> anyhow::Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(true)
        .from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let body = String::from_utf8(w.into_inner().context("flushing CSV")?)?;
    Ok(format!("# schema-version: {SCHEMA_VERSION}\n{body}"))
}

/// Pretty JSON of `body` with a top-level `schema_version` field.
pub fn json_text<T: Serialize>(body: &T) -> anyhow::Result<String> {
    let mut value = serde_json::to_value(body)?;
    let obj = match value {
        serde_json::Value::Object(ref mut m) => m,
        _ => anyhow::bail!("top-level JSON output must be an object"),
    };
    obj.insert("schema_version".into(), SCHEMA_VERSION.into());
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

//! `key.path=value` overrides applied to a TOML configuration before it is
//! deserialized.

use anyhow::{anyhow, bail, Context, Result};
use toml::{Table, Value};

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Sets `path` (dot-separated) inside `table`, creating tables on the way.
pub fn set_path(table: &mut Table, path: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key `{path}`");
    }
    let (last, parents) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry((*p).to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("`{p}` in `{path}` is not a table"))?;
    }
    cur.insert((*last).to_string(), value);
    Ok(())
}

/// Applies every `key=value` in order.
pub fn apply(table: &mut Table, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| anyhow!("override `{o}` is not of the form key=value"))?;
        set_path(table, k.trim(), parse_value(v.trim())).with_context(|| format!("applying `{o}`"))?;
    }
    Ok(())
}

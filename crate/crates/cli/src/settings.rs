//! Config file loading, `--set` overrides and the key listing for `--help`.

use std::path::Path;

use serde::Deserialize;
use sgo_core::config::RunConfig;
use toml::{Table, Value};

/// Invalid configuration, reported with the offending key path.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}: {}", self.field, self.reason)
    }
}

impl std::error::Error for ConfigError {}

fn bad(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError { field: field.into(), reason: reason.into() }
}

pub fn default_table() -> Table {
    Table::try_from(RunConfig::default()).expect("default config serializes")
}

/// Every `section.key = default` line.
pub fn key_listing() -> String {
    let mut out = String::new();
    for (section, v) in default_table() {
        if let Value::Table(t) = v {
            for (k, v) in t {
                out.push_str(&format!("  {section}.{k} = {v}\n"));
            }
        }
    }
    out
}

/// Rejects keys absent from the default config, naming the first one.
fn check_keys(user: &Table, reference: &Table, prefix: &str) -> Result<(), ConfigError> {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match reference.get(k) {
            None => return Err(bad(path, "unknown key")),
            Some(Value::Table(r)) => match v {
                Value::Table(u) => check_keys(u, r, &path)?,
                _ => return Err(bad(path, "expected a section")),
            },
            Some(_) => {}
        }
    }
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn apply_set(table: &mut Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| bad(assignment, "expected section.key=value"))?;
    let key = key.trim();
    let (section, field) = key.split_once('.').ok_or_else(|| bad(key, "expected section.key"))?;
    let defaults = default_table();
    let known = defaults.get(section).and_then(Value::as_table).is_some_and(|t| t.contains_key(field));
    if !known {
        return Err(bad(key, "unknown key"));
    }
    let sec = table.entry(section.to_string()).or_insert_with(|| Value::Table(Table::new()));
    let Value::Table(sec) = sec else {
        return Err(bad(section, "expected a section"));
    };
    sec.insert(field.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// The first user key that fails to deserialize on its own.
fn failing_field(table: &Table) -> String {
    for (section, v) in table {
        if let Value::Table(t) = v {
            for (k, v) in t {
                let mut one = Table::new();
                one.insert(section.clone(), Value::Table(Table::from_iter([(k.clone(), v.clone())])));
                if RunConfig::deserialize(Value::Table(one)).is_err() {
                    return format!("{section}.{k}");
                }
            }
        }
    }
    "config".into()
}

/// Reads the optional config file, applies overrides and validates.
pub fn load(path: Option<&Path>, sets: &[String]) -> anyhow::Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| sgo_core::CoreError::Io { path: p.to_path_buf(), source: e })?;
            text.parse::<Table>().map_err(|e| bad(p.display().to_string(), e.to_string()))?
        }
        None => Table::new(),
    };
    check_keys(&table, &default_table(), "")?;
    for s in sets {
        apply_set(&mut table, s)?;
    }
    let cfg = RunConfig::deserialize(Value::Table(table.clone())).map_err(|e| bad(failing_field(&table), e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

//! Experiment files: flat TOML keys matching `ExperimentConfig`, plus an
//! optional trailing `[matrix]` table whose arrays expand to a cross product.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fedsim_core::ExperimentConfig;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

/// One fully resolved point of the matrix.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    /// `key=value` pairs from the matrix that produced this point.
    pub point: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentFile {
    pub path: PathBuf,
    text: String,
    pub base: Table,
    pub matrix: BTreeMap<String, Vec<Value>>,
}

/// The part of the file before a `[matrix]` header.
fn base_part(text: &str) -> &str {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim() == "[matrix]" {
            return &text[..offset];
        }
        offset += line.len();
    }
    text
}

/// 1-based line of the first `key = ...` assignment, if any.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        l.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// Finds the key named in a serde message ("unknown field `x`" or "... for key `x`").
fn blamed_key(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

/// `path:line: message` for a TOML or schema error in `text`.
fn located(path: &Path, text: &str, e: &toml::de::Error) -> anyhow::Error {
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            anyhow!("{}:{line}: {}", path.display(), e.message())
        }
        None => anyhow!("{}: {}", path.display(), e.message()),
    }
}

impl ExperimentFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        // Typed parse of the base part for line-accurate diagnostics.
        toml::from_str::<ExperimentConfig>(base_part(&text))
            .map_err(|e| located(path, &text, &e))?;
        let mut doc: Table = toml::from_str(&text).map_err(|e| located(path, &text, &e))?;
        let matrix = match doc.remove("matrix") {
            None => BTreeMap::new(),
            Some(Value::Table(t)) => t
                .into_iter()
                .map(|(k, v)| match v {
                    Value::Array(vals) if !vals.is_empty() => Ok((k, vals)),
                    _ => Err(anyhow!(
                        "{}:{}: matrix key `{k}` must be a non-empty array",
                        path.display(),
                        key_line(&text, &k).unwrap_or(0)
                    )),
                })
                .collect::<Result<_>>()?,
            Some(_) => bail!("{}: `matrix` must be a table", path.display()),
        };
        let mut base = doc;
        if let Some(Value::String(trace)) = base.get("trace_file") {
            let trace = Path::new(trace);
            if trace.is_relative() {
                let dir = path.parent().unwrap_or(Path::new("."));
                base.insert("trace_file".into(), Value::String(dir.join(trace).display().to_string()));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            text,
            base,
            matrix,
        })
    }

    /// Expands the matrix with `overrides` applied on top of every point.
    pub fn resolve(&self, overrides: &[(String, Value)]) -> Result<Vec<Resolved>> {
        let mut out = Vec::new();
        for point in self.points() {
            let mut table = self.base.clone();
            let mut labels = Vec::new();
            for (k, v) in &point {
                table.insert(k.clone(), v.clone());
                labels.push((k.clone(), display_value(v)));
            }
            for (k, v) in overrides {
                table.insert(k.clone(), v.clone());
            }
            let config: ExperimentConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| {
                let msg = e.to_string();
                let from_override = blamed_key(&msg).is_some_and(|k| overrides.iter().any(|(o, _)| o == k));
                match blamed_key(&msg).and_then(|k| key_line(&self.text, k)) {
                    Some(line) if !from_override => anyhow!("{}:{line}: {}", self.path.display(), msg.trim()),
                    _ => anyhow!("{}: {}", self.path.display(), msg.trim()),
                }
            })?;
            config
                .validate()
                .map_err(|e| anyhow!("{}: {e}", self.path.display()))?;
            out.push(Resolved { config, point: labels });
        }
        Ok(out)
    }

    fn points(&self) -> Vec<Vec<(String, Value)>> {
        let mut points: Vec<Vec<(String, Value)>> = vec![Vec::new()];
        for (k, vals) in &self.matrix {
            points = points
                .into_iter()
                .flat_map(|p| {
                    vals.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((k.clone(), v.clone()));
                        q
                    })
                })
                .collect();
        }
        points
    }
}

fn display_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parses `key=value`; the value is read as a TOML literal, falling back to a
/// bare string (`selector=priority`).
pub fn parse_override(raw: &str) -> Result<(String, Value)> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| anyhow!("override {raw:?} is not of the form key=value"))?;
    let key = k.trim();
    if key.is_empty() {
        bail!("override {raw:?} has an empty key");
    }
    let v = v.trim();
    let value = toml::from_str::<Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((key.to_string(), value))
}

/// Directory-safe experiment name for a matrix point.
pub fn experiment_name(config: &ExperimentConfig, point: &[(String, String)]) -> String {
    let mut name = config.name.clone();
    for (k, v) in point {
        name.push_str(&format!("__{k}-{v}"));
    }
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// SHA-256 of the canonical JSON form (fields in declaration order, seed
/// excluded so every seed of one experiment shares the hash).
pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut value = serde_json::to_value(config).expect("config serializes");
    if let serde_json::Value::Object(map) = &mut value {
        map.remove("seed");
    }
    let canonical = serde_json::to_string(&value).expect("json value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_values() {
        assert_eq!(parse_override("rounds=3").unwrap(), ("rounds".into(), Value::Integer(3)));
        assert_eq!(
            parse_override("selector=priority").unwrap().1,
            Value::String("priority".into())
        );
        assert_eq!(parse_override("deadline = 2.5").unwrap().1, Value::Float(2.5));
        assert!(parse_override("rounds").is_err());
    }

    #[test]
    fn key_lines() {
        let text = "name = \"a\"\n\n  rounds = 3\nroundsx = 1\n";
        assert_eq!(key_line(text, "rounds"), Some(3));
        assert_eq!(key_line(text, "missing"), None);
        assert_eq!(blamed_key("unknown field `roundz`, expected one of"), Some("roundz"));
    }

    #[test]
    fn hash_ignores_seed_but_not_other_fields() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seed: 99, ..a.clone() };
        let c = ExperimentConfig { rounds: 7, ..a.clone() };
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&c));
    }
}

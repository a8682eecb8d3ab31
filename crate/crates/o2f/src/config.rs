//! Experiment configuration files.
//!
//! The text format is one `section.key = value` assignment per line; `#`
//! starts a comment. Values are parsed as JSON when possible (numbers,
//! booleans, arrays, quoted strings) and otherwise taken as bare strings, so
//! `assign.mode = o2f` works. A file whose first non-blank character is `{`
//! is read as JSON instead. Either way the values are overlaid on the
//! defaults, and unknown keys are rejected.

use std::path::Path;

use o2f_core::sim::ExperimentConfig;
use serde_json::{Map, Value};

use crate::error::CliError;

/// One parsed `key = value` line.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub line: usize,
    pub key: String,
    pub value: Value,
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn strip_comment(line: &str) -> &str {
    // a '#' inside a quoted string is kept
    let mut in_str = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Parses the flat text format. Keys must be unique.
pub fn parse_flat(text: &str) -> Result<Vec<Assignment>, CliError> {
    let mut out: Vec<Assignment> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {lineno}: expected `key = value`")))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || key.split('.').any(|s| s.trim().is_empty() || s.contains(char::is_whitespace)) {
            return Err(CliError::config(format!("line {lineno}: malformed key `{key}`")));
        }
        if value.is_empty() {
            return Err(CliError::config(format!("line {lineno}: `{key}` has no value")));
        }
        if out.iter().any(|a| a.key == key) {
            return Err(CliError::config(format!("line {lineno}: `{key}` set twice")));
        }
        out.push(Assignment {
            line: lineno,
            key: key.to_string(),
            value: parse_value(value),
        });
    }
    Ok(out)
}

/// Sets the dotted `key` inside `root`, creating intermediate objects.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::config(format!("`{key}`: `{}` is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("split yields at least one part")
}

/// Recursively merges `patch` into `base`; non-object values replace.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn defaults_value() -> Value {
    serde_json::to_value(ExperimentConfig::default()).expect("default config serializes")
}

/// Deserializes and validates a fully merged tree.
pub fn finish(tree: Value) -> Result<ExperimentConfig, CliError> {
    let cfg: ExperimentConfig = serde_json::from_value(tree).map_err(|e| CliError::config(e.to_string()))?;
    cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
    Ok(cfg)
}

/// Applies assignments on top of the defaults, without validating.
pub fn tree_from_assignments(items: &[Assignment]) -> Result<Value, CliError> {
    let mut tree = defaults_value();
    for a in items {
        set_path(&mut tree, &a.key, a.value.clone())?;
    }
    Ok(tree)
}

/// Parses either format into an unvalidated tree over the defaults.
pub fn tree_from_str(text: &str) -> Result<Value, CliError> {
    if text.trim_start().starts_with('{') {
        let patch: Value = serde_json::from_str(text).map_err(|e| CliError::config(format!("json: {e}")))?;
        let mut tree = defaults_value();
        merge(&mut tree, patch);
        Ok(tree)
    } else {
        tree_from_assignments(&parse_flat(text)?)
    }
}

pub fn config_from_str(text: &str) -> Result<ExperimentConfig, CliError> {
    finish(tree_from_str(text)?)
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Renders a config in the flat format. Parsing the result gives back an
/// equal config.
pub fn to_flat(cfg: &ExperimentConfig) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut String) {
        match v {
            Value::Object(map) if !map.is_empty() => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            _ => {
                out.push_str(prefix);
                out.push_str(" = ");
                out.push_str(&v.to_string());
                out.push('\n');
            }
        }
    }
    let mut out = String::new();
    walk("", &serde_json::to_value(cfg).expect("config serializes"), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use o2f_core::sim::{AssignMode, ModelKind};

    #[test]
    fn flat_overrides() {
        let cfg = config_from_str(
            "# comment\nseed = 3\nassign.mode = o2m\nassign.k = 9   # trailing\nmodel.kind = \"mlp\"\ngrid.strides = [8, 16, 32]\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.assign.mode, AssignMode::O2m);
        assert_eq!(cfg.assign.k, 9);
        assert_eq!(cfg.model.kind, ModelKind::Mlp);
        assert_eq!(cfg.grid.strides, vec![8.0, 16.0, 32.0]);
        assert_eq!(cfg.schedule.t_max, 0.6);
    }

    #[test]
    fn empty_is_default() {
        assert_eq!(config_from_str("").unwrap(), ExperimentConfig::default());
        assert_eq!(config_from_str("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn json_partial() {
        let cfg = config_from_str(r#"{"assign": {"k": 3}, "schedule": {"n_epochs": 5}}"#).unwrap();
        assert_eq!(cfg.assign.k, 3);
        assert_eq!(cfg.schedule.n_epochs, 5);
        assert_eq!(cfg.assign.alpha, 0.8);
    }

    #[test]
    fn rejects() {
        for bad in [
            "assign.kk = 3",
            "assign.k = -1",
            "assign.k",
            "assign.k = ",
            "assign.k = 1\nassign.k = 2",
            "seed.x = 1",
            "schedule.t_max = 2",
            "assign.mode = nope",
            ". = 1",
            "{\"assign\": ",
        ] {
            let err = config_from_str(bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.assign.alpha = 0.1 + 0.2;
        cfg.optimizer.lr = Some(0.3);
        cfg.schedule = o2f_core::ScheduleConfig::hybrid(0.6, 0.2, 9).unwrap();
        assert_eq!(config_from_str(&to_flat(&cfg)).unwrap(), cfg);
    }
}

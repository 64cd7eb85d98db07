//! Flat `key = value` configuration files and flag overrides.
//!
//! Keys are the kebab-case flag names (`erm-lr`, `gamma-burn-in`, ...).
//! Later settings win, so flags applied after the file override it.

use std::path::Path;

use duel_align::experiment::{ExperimentConfig, OracleEndpoint};
use serde_json::Value;

use crate::error::{HarnessError, Result};

/// Every key accepted by [`apply_setting`].
pub const KEYS: &[&str] = &[
    "agent",
    "optimizer",
    "context-dim",
    "feature-dim",
    "n-actions",
    "embed-dim",
    "ensemble-size",
    "erm-hidden",
    "proposals",
    "lambda",
    "gamma",
    "gamma-burn-in",
    "m-batches",
    "batch-size",
    "erm-batch-size",
    "erm-lr",
    "erm-optimizer",
    "policy-lr",
    "temperature",
    "reference-scale",
    "beta",
    "retry-cap",
    "budget",
    "eval-period",
    "holdout-size",
    "offline-epochs",
    "seed",
    "env-seed",
    "reward",
    "label-mode",
    "oracle",
];

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_settings(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected `key = value`, got `{}`", n + 1, raw.trim())))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(config_err(format!("line {}: empty key or value", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn to_json_value(key: &str, value: &str) -> Value {
    if value == "default" {
        return Value::Null;
    }
    if key == "erm-hidden" {
        let widths: Vec<Value> = value
            .split(',')
            .map(|w| w.trim())
            .filter(|w| !w.is_empty())
            .map(|w| w.parse::<u64>().map(Value::from).unwrap_or_else(|_| Value::String(w.into())))
            .collect();
        return Value::Array(widths);
    }
    match serde_json::from_str::<Value>(value) {
        Ok(v @ (Value::Number(_) | Value::Bool(_))) => v,
        _ => Value::String(value.to_string()),
    }
}

/// Applies one setting to `config`.
pub fn apply_setting(config: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    if key == "oracle" {
        config.oracle = value.parse::<OracleEndpoint>().map_err(config_err)?;
        return Ok(());
    }
    if !KEYS.contains(&key) {
        return Err(config_err(format!("unknown key `{key}`")));
    }
    let mut json = serde_json::to_value(&*config)?;
    json[key.replace('-', "_")] = to_json_value(key, value);
    let endpoint = config.oracle.clone();
    *config = serde_json::from_value(json).map_err(|e| config_err(format!("`{key} = {value}`: {e}")))?;
    config.oracle = endpoint;
    Ok(())
}

/// Defaults, then the optional file, then `overrides` in order.
pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        for (k, v) in parse_settings(&text)? {
            apply_setting(&mut config, &k, &v)?;
        }
    }
    for (k, v) in overrides {
        apply_setting(&mut config, k, v)?;
    }
    config.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(config)
}

/// Renders `config` in the file format, one key per line.
pub fn render(config: &ExperimentConfig) -> String {
    let json = serde_json::to_value(config).expect("config serializes");
    let mut out = String::new();
    for key in KEYS {
        if *key == "oracle" {
            out.push_str(&format!("oracle = {}\n", config.oracle));
            continue;
        }
        let v = &json[key.replace('-', "_")];
        let text = match v {
            Value::Null => "default".to_string(),
            Value::String(s) => s.clone(),
            Value::Array(a) => a.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
            other => other.to_string(),
        };
        out.push_str(&format!("{key} = {text}\n"));
    }
    out
}

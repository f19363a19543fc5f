//! `--config` support: a JSON object whose keys are long flag names
//! (`a_star` and `a-star` both work). Values are spliced in front of the
//! command-line flags, so an explicit flag overrides the file. The key
//! `command` may name the subcommand when the command line omits it.

use std::path::Path;

use clap::Command;
use serde_json::Value;

use crate::error::CliError;

pub fn merge(root: &Command, raw: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(path) = config_path(&raw) else {
        return Ok(raw);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(Path::new(&path), e))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {path}: {e}")))?;
    let Value::Object(map) = value else {
        return Err(CliError::Usage(format!(
            "config {path}: expected a JSON object"
        )));
    };

    let names: Vec<String> = root
        .get_subcommands()
        .map(|c| c.get_name().to_string())
        .collect();
    let position = raw
        .iter()
        .skip(1)
        .position(|a| names.contains(a))
        .map(|p| p + 1);
    let from_file = match map.get("command") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            return Err(CliError::Usage(
                "config key 'command' must be a string".into(),
            ))
        }
        None => None,
    };
    let (name, insert_at, mut argv) = match (position, from_file) {
        (Some(p), _) => (raw[p].clone(), p + 1, raw),
        (None, Some(c)) => {
            let mut argv = raw;
            argv.insert(1, c.clone());
            (c, 2, argv)
        }
        (None, None) => return Ok(raw),
    };
    let sub = root
        .find_subcommand(&name)
        .ok_or_else(|| CliError::Usage(format!("unknown command '{name}'")))?;
    let known: Vec<String> = sub
        .get_arguments()
        .chain(root.get_arguments())
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();

    let mut extra = Vec::new();
    for (key, v) in &map {
        if key == "command" || key == "config" {
            continue;
        }
        let flag = key.replace('_', "-");
        if !known.contains(&flag) {
            return Err(CliError::Usage(format!(
                "config {path}: unknown key '{key}' for '{name}'"
            )));
        }
        let flag = format!("--{flag}");
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => extra.push(flag),
            Value::Number(n) => extra.extend([flag, n.to_string()]),
            Value::String(s) => extra.extend([flag, s.clone()]),
            Value::Array(items) => {
                extra.push(flag);
                for it in items {
                    extra.push(match it {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    });
                }
            }
            Value::Object(_) => {
                return Err(CliError::Usage(format!(
                    "config {path}: key '{key}' cannot be an object"
                )));
            }
        }
    }
    argv.splice(insert_at..insert_at, extra);
    Ok(argv)
}

fn config_path(raw: &[String]) -> Option<String> {
    let mut it = raw.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

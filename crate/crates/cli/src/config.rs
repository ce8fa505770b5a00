//! JSON config files.
//!
//! A config is an object whose keys are long flag names (`"max-sweeps"` or
//! `"max_sweeps"`). Top-level keys apply to whichever subcommand accepts
//! them; a nested object keyed by a subcommand name applies to that
//! subcommand only. Entries are appended to argv unless the flag was given
//! explicitly, so the command line always wins.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Command;
use serde_json::{Map, Value};

/// Removes `--config PATH` / `--config=PATH` from argv and returns it.
pub fn take_config_path(args: &mut Vec<OsString>) -> Result<Option<OsString>> {
    let mut found = None;
    let mut i = 1;
    while i < args.len() {
        let arg = args[i].to_string_lossy().into_owned();
        if arg == "--" {
            break;
        }
        if arg == "--config" {
            if i + 1 >= args.len() {
                bail!("--config needs a path");
            }
            found = Some(args.remove(i + 1));
            args.remove(i);
        } else if let Some(path) = arg.strip_prefix("--config=") {
            found = Some(OsString::from(path));
            args.remove(i);
        } else {
            i += 1;
        }
    }
    Ok(found)
}

fn subcommand_index(args: &[OsString], cmd: &Command) -> Option<(usize, String)> {
    args.iter().enumerate().skip(1).find_map(|(i, a)| {
        let s = a.to_str()?;
        cmd.find_subcommand(s).map(|_| (i, s.to_string()))
    })
}

fn flag_given(args: &[OsString], long: &str) -> bool {
    let plain = format!("--{long}");
    let joined = format!("--{long}=");
    args.iter().any(|a| {
        let a = a.to_string_lossy();
        a == plain.as_str() || a.starts_with(&joined)
    })
}

fn scalar_text(key: &str, v: &Value) -> Result<Option<String>> {
    Ok(match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(true) => Some(String::new()),
        Value::Bool(false) | Value::Null => None,
        _ => bail!("config key {key:?} must be a scalar"),
    })
}

/// Appends config entries for the selected subcommand to `args`.
pub fn merge_config(args: &mut Vec<OsString>, cmd: &Command, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let root: Map<String, Value> = serde_json::from_str(&text)
        .with_context(|| format!("config {} must be a JSON object", path.display()))?;
    let Some((_, name)) = subcommand_index(args, cmd) else {
        return Ok(());
    };
    let sub = cmd.find_subcommand(&name).expect("found above");
    let known: Vec<String> = sub
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();

    let mut entries: Vec<(String, Value, bool)> = Vec::new();
    for (key, value) in &root {
        match value {
            Value::Object(inner) if cmd.find_subcommand(key).is_some() => {
                if key == &name {
                    entries.extend(inner.iter().map(|(k, v)| (k.clone(), v.clone(), true)));
                }
            }
            _ => entries.push((key.clone(), value.clone(), false)),
        }
    }
    // Subcommand-specific entries take precedence over top-level ones.
    entries.sort_by_key(|e| !e.2);

    let mut seen = Vec::new();
    for (key, value, strict) in entries {
        let long = key.replace('_', "-");
        if !known.contains(&long) {
            if strict {
                bail!("config key {key:?} is not a flag of {name}");
            }
            continue;
        }
        if seen.contains(&long) || flag_given(args, &long) {
            continue;
        }
        seen.push(long.clone());
        if let Some(text) = scalar_text(&key, &value)? {
            args.push(format!("--{long}").into());
            if !text.is_empty() {
                args.push(text.into());
            }
        }
    }
    Ok(())
}

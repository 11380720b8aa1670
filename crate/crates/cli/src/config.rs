//! Flag / config-file / default resolution.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{de::DeserializeOwned, Serialize};
use serde_json::{Map, Value};

/// Loads the section of a JSON config file that applies to `command`: the
/// object under the command's key when present, else the top-level object
/// minus any other command sections.
pub fn load_section(path: &Path, command: &str, commands: &[&str]) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    let Value::Object(mut top) = value else {
        bail!("config file must hold a JSON object");
    };
    if let Some(section) = top.remove(command) {
        let Value::Object(section) = section else {
            bail!("config section `{command}` must be an object");
        };
        return Ok(section);
    }
    top.retain(|k, _| !commands.contains(&k.as_str()));
    Ok(top)
}

/// Overlays the flags that were given on top of the file values. File keys
/// must name known options.
pub fn resolve<T: Serialize + DeserializeOwned>(
    flags: &T,
    file: Option<Map<String, Value>>,
) -> Result<T> {
    let Value::Object(given) = serde_json::to_value(flags)? else {
        bail!("flags must serialize to an object");
    };
    let mut merged = file.unwrap_or_default();
    if let Some(unknown) = merged.keys().find(|k| !given.contains_key(*k)) {
        bail!("unknown config key `{unknown}`");
    }
    for (k, v) in given {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).context("invalid configuration")
}

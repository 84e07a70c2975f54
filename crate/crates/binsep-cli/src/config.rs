//! Layered run configuration and the exit-code error type.
//!
//! Every subcommand resolves its config the same way: JSON file (if
//! given), command-line flag overlays, then `--set dotted.key=value`
//! overrides, in that order. The merged tree deserializes into a
//! `deny_unknown_fields` struct, so typos anywhere are hard errors.
//! The effective config is persisted next to the outputs, and feeding
//! it back through `--config` reproduces the run.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Errors split by exit code: usage/config problems exit 2, runtime
/// and data problems exit 3.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Run(m) => m,
        }
    }
}

impl From<binsep::Error> for CliError {
    fn from(e: binsep::Error) -> Self {
        match &e {
            // The library raises these for caller-supplied bad values,
            // which in a CLI run means the user's config.
            binsep::Error::Config(_) | binsep::Error::InvalidArgument(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Run(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn run_err(msg: impl Into<String>) -> CliError {
    CliError::Run(msg.into())
}

/// File name of the persisted effective config in every output
/// directory.
pub const CONFIG_FILE: &str = "config.json";

pub fn resolve<T: DeserializeOwned>(
    file: Option<&Path>,
    overlay: Value,
    sets: &[String],
) -> CliResult<T> {
    let mut root = match file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("config {}: {e}", path.display())))?
        }
        None => Value::Object(Default::default()),
    };
    merge(&mut root, overlay);
    for spec in sets {
        apply_set(&mut root, spec)?;
    }
    serde_json::from_value(root).map_err(|e| usage(format!("config: {e}")))
}

/// Deep merge: objects merge key by key, anything else is replaced.
fn merge(dst: &mut Value, src: Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                merge(d.entry(k).or_insert(Value::Null), v);
            }
        }
        (d, s) => *d = s,
    }
}

/// Applies one `--set a.b.c=value` override. The value parses as JSON
/// when it can (numbers, booleans, arrays) and falls back to a string.
fn apply_set(root: &mut Value, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| usage(format!("--set {spec}: expected KEY=VALUE")))?;
    if key.is_empty() {
        return Err(usage(format!("--set {spec}: empty key")));
    }
    let value: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    let mut node = root;
    let mut path = key.split('.').peekable();
    while let Some(segment) = path.next() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| usage(format!("--set {key}: `{segment}` is not an object")))?;
        let slot = map
            .entry(segment.to_string())
            .or_insert(Value::Object(Default::default()));
        if path.peek().is_none() {
            *slot = value;
            return Ok(());
        }
        if !slot.is_object() {
            *slot = Value::Object(Default::default());
        }
        node = slot;
    }
    unreachable!("split always yields at least one segment");
}

/// Writes the effective config into `out_dir`, creating it first.
pub fn persist<T: Serialize>(out_dir: &Path, config: &T) -> CliResult<()> {
    fs::create_dir_all(out_dir).map_err(|e| run_err(format!("{}: {e}", out_dir.display())))?;
    let path = out_dir.join(CONFIG_FILE);
    let text = serde_json::to_string_pretty(config)
        .map_err(|e| run_err(format!("serialize config: {e}")))?;
    fs::write(&path, text).map_err(|e| run_err(format!("{}: {e}", path.display())))?;
    Ok(())
}

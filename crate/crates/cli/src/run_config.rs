use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

/// The resolved invocation: command name, every flag with its effective
/// value, and anything derived from them. Embedded in every JSON artifact.
pub fn run_config(command: &str, args: &impl Serialize, resolved: Value) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": serde_json::to_value(args).expect("flags serialize"),
        "resolved": resolved,
    })
}

/// Pretty JSON with a trailing newline, creating parent directories.
pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Preprocessing mode recorded in the `run_config.json` that `train` left
/// next to a model file, if any.
pub fn recorded_preprocess(model_path: &Path) -> Option<String> {
    let sidecar = model_path.with_file_name("run_config.json");
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(sidecar).ok()?).ok()?;
    doc.pointer("/resolved/training/preprocess")?.as_str().map(str::to_string)
}

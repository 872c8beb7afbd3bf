use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::Value;
use superatom_core::format;

/// A file produced by a subcommand, held in memory until the run succeeds.
pub struct Output {
    pub name: String,
    pub contents: String,
}

impl Output {
    pub fn csv(name: &str, contents: String) -> Self {
        Output {
            name: name.to_string(),
            contents,
        }
    }

    pub fn json(name: &str, value: &Value) -> Self {
        let mut contents = serde_json::to_string_pretty(&round_json(value)).expect("json");
        contents.push('\n');
        Output {
            name: name.to_string(),
            contents,
        }
    }
}

/// Rounds every number in `v` to 12 significant digits; non-finite values
/// become null.
pub fn round_json(v: &Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap();
            serde_json::Number::from_f64(format::round12(x))
                .map(Value::Number)
                .unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, v)| (k.clone(), round_json(v))).collect()),
        other => other.clone(),
    }
}

/// Number as JSON, null when not finite.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, &path).with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(path)
}

pub fn write_all(dir: &Path, outputs: &[Output]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for o in outputs {
        write_atomic(dir, &o.name, &o.contents)?;
    }
    Ok(())
}

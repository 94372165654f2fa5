//! Layered configuration: built-in defaults, then a file, then flags.
//!
//! A file is TOML (keys at top level or under a `[<command>]` table) or a
//! manifest JSON from an earlier run, whose `config` object is reused as is.
//! Flags are serialized to JSON and merged over the file; unset flags are
//! `null` and leave the file value alone.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::commands::COMMAND_NAMES;
use crate::{usage, CliResult};

pub fn load_file(path: &Path, command: &str) -> CliResult<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let root: Value = if is_json {
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
    } else {
        let table: toml::Table = text
            .parse()
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        serde_json::to_value(table).map_err(|e| usage(format!("{}: {e}", path.display())))?
    };
    let Value::Object(obj) = root else {
        return Err(usage(format!("{}: configuration must be a table", path.display())));
    };
    if let (Some(Value::String(cmd)), Some(cfg)) = (obj.get("command"), obj.get("config")) {
        if cmd != command {
            return Err(usage(format!(
                "{} is a manifest of `{cmd}`, not `{command}`",
                path.display()
            )));
        }
        return Ok(cfg.clone());
    }
    if obj.keys().any(|k| COMMAND_NAMES.contains(&k.as_str())) {
        return match obj.get(command) {
            Some(v @ Value::Object(_)) => Ok(v.clone()),
            Some(_) => Err(usage(format!("{}: [{command}] must be a table", path.display()))),
            None => Ok(Value::Object(Map::new())),
        };
    }
    Ok(Value::Object(obj))
}

/// Recursively overlay `top` on `base`, skipping `null` leaves of `top`.
pub fn merge(base: &mut Value, top: &Value) {
    match (base, top) {
        (_, Value::Null) => {}
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                if v.is_null() {
                    continue;
                }
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        let mut fresh = Value::Object(Map::new());
                        if v.is_object() {
                            merge(&mut fresh, v);
                        } else {
                            fresh = v.clone();
                        }
                        b.insert(k.clone(), fresh);
                    }
                }
            }
        }
        (b, t) => *b = t.clone(),
    }
}

/// Defaults of `C`, overlaid with the file and then with the flags.
pub fn resolve<C, F>(command: &str, file: Option<&Path>, flags: &F) -> CliResult<C>
where
    C: DeserializeOwned,
    F: Serialize,
{
    let mut v = match file {
        Some(p) => load_file(p, command)?,
        None => Value::Object(Map::new()),
    };
    let f = serde_json::to_value(flags).map_err(|e| usage(e.to_string()))?;
    merge(&mut v, &f);
    serde_json::from_value(v).map_err(|e| usage(format!("invalid `{command}` configuration: {e}")))
}

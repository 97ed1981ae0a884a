//! Defaults file support.
//!
//! A TOML file given with `--config` supplies flag values. Top-level keys
//! apply to every subcommand that accepts them; a table named after the
//! subcommand applies to that subcommand only and wins over top-level keys.
//! Keys are long flag names (`parallelism`, `bridge-cmd`, ...). The values
//! are spliced into the argument list ahead of the user's own flags, and since
//! the last occurrence of a flag wins, the command line always takes
//! precedence.

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::error::CliError;

/// Finds `--config <path>` / `--config=<path>` before the subcommand.
pub fn config_path(args: &[String]) -> Option<PathBuf> {
    let mut iter = args.iter().skip(1);
    while let Some(arg) = iter.next() {
        if arg == "--config" {
            return iter.next().map(PathBuf::from);
        }
        if let Some(p) = arg.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
        if !arg.starts_with('-') {
            break;
        }
    }
    None
}

fn flag_tokens(
    key: &str,
    value: &Value,
    base: &Path,
    out: &mut Vec<String>,
) -> Result<(), CliError> {
    let flag = format!("--{key}");
    match value {
        Value::Boolean(true) => out.push(flag),
        Value::Boolean(false) => {}
        // relative paths in the file are relative to the file
        Value::String(s) if PATH_FLAGS.contains(&flag.as_str()) && Path::new(s).is_relative() => {
            out.extend([flag, base.join(s).display().to_string()])
        }
        Value::String(s) => out.extend([flag, s.clone()]),
        Value::Integer(i) => out.extend([flag, i.to_string()]),
        Value::Float(f) => out.extend([flag, f.to_string()]),
        Value::Array(items) => {
            for item in items {
                flag_tokens(key, item, base, out)?;
            }
        }
        other => {
            return Err(CliError::usage(format!(
                "config key {key:?}: unsupported value {other}"
            )))
        }
    }
    Ok(())
}

/// Keys of `table` that are flags of `accepted`, in key order.
fn collect(
    table: &Table,
    accepted: &[String],
    base: &Path,
    out: &mut Vec<String>,
) -> Result<(), CliError> {
    for (key, value) in table {
        if value.is_table() || !accepted.iter().any(|a| a == key) {
            continue;
        }
        flag_tokens(key, value, base, out)?;
    }
    Ok(())
}

/// Inserts the defaults for `subcommand` right after it in `args`.
pub fn splice(
    args: Vec<String>,
    path: &Path,
    subcommand: &str,
    accepted: &[String],
) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    let table: Table = text
        .parse()
        .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mut defaults = Vec::new();
    collect(&table, accepted, base, &mut defaults)?;
    if let Some(Value::Table(section)) = table.get(subcommand) {
        collect(section, accepted, base, &mut defaults)?;
    }

    let Some(at) = args.iter().position(|a| a == subcommand) else {
        return Ok(args);
    };
    let mut out = args[..=at].to_vec();
    out.extend(defaults);
    out.extend_from_slice(&args[at + 1..]);
    Ok(out)
}

const PATH_FLAGS: &[&str] = &[
    "--data",
    "--out",
    "--model",
    "--explanations",
    "--manifest",
    "--registry",
];

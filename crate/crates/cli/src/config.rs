//! Resolved run configurations as flat `key=value` text.
//!
//! Keys are the long flag names. The same map is embedded in JSON outputs
//! and written next to CSV and JSON-lines outputs as `<path>.config`, and
//! `--config` reads it back, so any artifact can be regenerated from its
//! embedded configuration.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

pub type Resolved = BTreeMap<String, String>;

/// Flattens a serialized argument struct into flag-name keys.
pub fn resolve(command: &str, args: &impl Serialize) -> Result<Resolved, CliError> {
    let value = serde_json::to_value(args).map_err(|e| CliError::Usage(e.to_string()))?;
    let Value::Object(fields) = value else {
        return Err(CliError::Usage("arguments must serialize to an object".into()));
    };
    let mut out = Resolved::new();
    out.insert("command".into(), command.into());
    for (k, v) in fields {
        let text = match v {
            Value::Null => continue,
            Value::String(s) => s,
            Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        };
        out.insert(k.replace('_', "-"), text);
    }
    Ok(out)
}

pub fn to_text(resolved: &Resolved) -> String {
    resolved.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn to_json(resolved: &Resolved) -> Value {
    Value::Object(
        resolved
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect(),
    )
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".config");
    PathBuf::from(s)
}

fn parse_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Number of leading tokens (after the program name) that select the
/// subcommand.
fn subcommand_depth(args: &[OsString]) -> usize {
    match args.get(1).and_then(|a| a.to_str()) {
        Some("experiment") => 3,
        _ => 2,
    }
}

/// Splices the contents of a `--config` file into `args`, right after the
/// subcommand, so that explicit flags override it.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let Some(s) = a.to_str() else { continue };
        if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(args) };
    let depth = subcommand_depth(&args);
    if args.len() < depth {
        return Ok(args);
    }
    let command: Vec<&str> = args[1..depth].iter().filter_map(|a| a.to_str()).collect();
    let command = command.join(" ");
    let mut injected = Vec::new();
    for (k, v) in parse_file(&path)? {
        match k.as_str() {
            "command" => {
                if v != command {
                    return Err(CliError::Usage(format!(
                        "{} was written by `{v}`, not `{command}`",
                        path.display()
                    )));
                }
            }
            "config" => {}
            _ if v == "true" => injected.push(OsString::from(format!("--{k}"))),
            _ if v == "false" => {}
            _ => {
                injected.push(OsString::from(format!("--{k}")));
                injected.push(OsString::from(v));
            }
        }
    }
    let mut out = args[..depth].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[depth..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Demo {
        mc_samples: usize,
        seeds: Vec<u64>,
        clip_off: bool,
        out: Option<String>,
    }

    #[test]
    fn flattens_to_flag_names() {
        let r = resolve(
            "train",
            &Demo {
                mc_samples: 3,
                seeds: vec![1, 2],
                clip_off: false,
                out: None,
            },
        )
        .unwrap();
        assert_eq!(to_text(&r), "clip-off=false\ncommand=train\nmc-samples=3\nseeds=1,2\n");
    }

    #[test]
    fn config_is_spliced_before_explicit_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.config");
        std::fs::write(&p, "command=train\nepochs=7\nclip-off=true\nrecord-wallclock=false\n").unwrap();
        let args: Vec<OsString> = ["vipac", "train", "--config", p.to_str().unwrap(), "--epochs", "9"]
            .iter()
            .map(OsString::from)
            .collect();
        let out: Vec<String> = expand(args)
            .unwrap()
            .into_iter()
            .map(|s| s.into_string().unwrap())
            .collect();
        assert_eq!(
            out[..5],
            ["vipac", "train", "--epochs", "7", "--clip-off"].map(String::from)
        );
        assert_eq!(out[out.len() - 2..], ["--epochs", "9"].map(String::from));

        std::fs::write(&p, "command=bound\n").unwrap();
        let args: Vec<OsString> = ["vipac", "train", "--config", p.to_str().unwrap()]
            .iter()
            .map(OsString::from)
            .collect();
        assert!(expand(args).is_err());
    }
}

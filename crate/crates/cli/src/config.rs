//! `key=value` files merged into the command line.
//!
//! Each non-empty line that does not start with `#` becomes `--key=value`
//! and is appended after the arguments given on the command line, so file
//! entries take precedence.

use std::path::Path;

pub fn file_args(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("config line {}: expected key=value", no + 1))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(format!("config line {}: invalid key `{}`", no + 1, k.trim()));
        }
        out.push(format!("--{key}={}", v.trim()));
    }
    Ok(out)
}

/// Splices the contents of `--config FILE` (if present) onto the end of
/// `args`.
pub fn expand(mut args: Vec<String>) -> Result<Vec<String>, String> {
    let mut path = None;
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--config" && i + 1 < args.len() {
            path = Some(args[i + 1].clone());
            i += 2;
        } else if let Some(p) = args[i].strip_prefix("--config=") {
            path = Some(p.to_string());
            i += 1;
        } else {
            i += 1;
        }
    }
    if let Some(p) = path {
        args.extend(file_args(Path::new(&p))?);
    }
    Ok(args)
}

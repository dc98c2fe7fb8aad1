//! Run manifests and `key = value` config files.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

/// Every setting that influences a run's outputs. Input files are recorded
/// by content hash, not path, so moving inputs keeps the manifest.
#[derive(Clone, Debug, Default)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn input(&mut self, key: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.set(
            &format!("{key}.sha256"),
            hex::encode(Sha256::digest(&bytes)),
        );
        Ok(())
    }

    pub fn canonical(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// First line of every output file.
    pub fn header(&self) -> String {
        format!("# manifest={}\n", self.hash())
    }
}

/// Keys of a manifest that are records rather than settings.
fn is_record_key(key: &str) -> bool {
    matches!(key, "command" | "version" | "manifest") || key.ends_with(".sha256")
}

/// Expands `--config FILE` into flags placed right after the subcommand, so
/// that flags given on the command line, which come later, take precedence.
///
/// Lines are `key = value`; `#` starts a comment. `true`/`false` values
/// switch boolean flags. Manifest record lines are ignored, so a written
/// manifest can be fed back as a config file.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let Some(s) = a.to_str() else { continue };
        if s == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading config {}", Path::new(&path).display()))?;
    let mut flags: Vec<OsString> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key = value", n + 1);
        };
        let (key, value) = (key.trim(), value.trim());
        if is_record_key(key) || key == "config" {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            "true" => flags.push(flag.into()),
            "false" => {}
            _ => {
                flags.push(flag.into());
                flags.push(value.into());
            }
        }
    }
    let mut out = args;
    let at = 2.min(out.len());
    out.splice(at..at, flags);
    Ok(out)
}

//! Minimal flag parser with manifest-file fallback.
//!
//! Resolution order for every value: explicit CLI flag, then the
//! `--manifest` file (key=value lines from a previous run), then the
//! built-in default supplied at the call site.

use std::collections::BTreeMap;

use svdiff_linalg::error::{Error, Result};

/// Raised for malformed command lines; main() maps it to usage + exit 2.
#[derive(Debug)]
pub struct UsageError(pub String);

#[derive(Debug, Clone, Copy)]
pub struct FlagSpec {
    pub name: &'static str,
    pub takes_value: bool,
    pub repeatable: bool,
}

pub const fn flag(name: &'static str) -> FlagSpec {
    FlagSpec {
        name,
        takes_value: true,
        repeatable: false,
    }
}

pub const fn switch(name: &'static str) -> FlagSpec {
    FlagSpec {
        name,
        takes_value: false,
        repeatable: false,
    }
}

pub const fn multi(name: &'static str) -> FlagSpec {
    FlagSpec {
        name,
        takes_value: true,
        repeatable: true,
    }
}

#[derive(Debug, Default)]
pub struct Parsed {
    pub positionals: Vec<String>,
    flags: BTreeMap<String, Vec<String>>,
}

impl Parsed {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.flags.get(name).and_then(|v| v.last()).map(|s| s.as_str())
    }

    pub fn get_all(&self, name: &str) -> Vec<&str> {
        self.flags
            .get(name)
            .map(|v| v.iter().map(|s| s.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn has(&self, name: &str) -> bool {
        self.flags.contains_key(name)
    }

    pub fn f64_or(&self, name: &str, default: f64) -> Result<f64> {
        match self.get(name) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("--{name} expects a number, got {s:?}"))),
        }
    }

    pub fn usize_or(&self, name: &str, default: usize) -> Result<usize> {
        match self.get(name) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("--{name} expects an integer, got {s:?}"))),
        }
    }

    pub fn require(&self, name: &str) -> Result<&str> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("missing required flag --{name}")))
    }

    /// Seed resolution: --seed flag, then manifest, then SVDIFF_SEED,
    /// then 0.
    pub fn seed(&self) -> Result<u64> {
        if let Some(s) = self.get("seed") {
            return s
                .parse()
                .map_err(|_| Error::Config(format!("--seed expects an integer, got {s:?}")));
        }
        match std::env::var("SVDIFF_SEED") {
            Ok(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("SVDIFF_SEED expects an integer, got {s:?}"))),
            Err(_) => Ok(0),
        }
    }

    /// All resolved flags, for manifest writing.
    pub fn resolved(&self) -> &BTreeMap<String, Vec<String>> {
        &self.flags
    }
}

/// Parses `argv` against the allowed flags. `--manifest <file>` is
/// accepted everywhere; its `flag.*` / `arg.*` entries fill anything the
/// command line left unset.
pub fn parse(
    argv: &[String],
    flags: &[FlagSpec],
    usage: &str,
) -> std::result::Result<Parsed, UsageError> {
    let mut out = Parsed::default();
    let mut i = 0;
    while i < argv.len() {
        let arg = &argv[i];
        if let Some(name) = arg.strip_prefix("--") {
            let spec = if name == "manifest" {
                FlagSpec {
                    name: "manifest",
                    takes_value: true,
                    repeatable: false,
                }
            } else {
                *flags
                    .iter()
                    .find(|f| f.name == name)
                    .ok_or_else(|| UsageError(format!("unknown flag --{name}\n{usage}")))?
            };
            if spec.takes_value {
                i += 1;
                let value = argv
                    .get(i)
                    .ok_or_else(|| UsageError(format!("--{name} expects a value\n{usage}")))?;
                let slot = out.flags.entry(name.to_string()).or_default();
                if !spec.repeatable && !slot.is_empty() {
                    slot.clear();
                }
                slot.push(value.clone());
            } else {
                out.flags.entry(name.to_string()).or_insert_with(|| vec!["true".into()]);
            }
        } else if arg == "-o" {
            i += 1;
            let value = argv
                .get(i)
                .ok_or_else(|| UsageError(format!("-o expects a path\n{usage}")))?;
            out.flags.insert("out".into(), vec![value.clone()]);
        } else {
            out.positionals.push(arg.clone());
        }
        i += 1;
    }

    if let Some(path) = out.get("manifest").map(str::to_string) {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| UsageError(format!("cannot read manifest {path}: {e}")))?;
        let cli_set: Vec<String> = out.flags.keys().cloned().collect();
        let mut manifest_pos: BTreeMap<usize, String> = BTreeMap::new();
        for line in text.lines() {
            let Some((key, value)) = line.split_once('=') else {
                continue;
            };
            if let Some(flag_key) = key.strip_prefix("flag.") {
                // repeatable flags are stored as flag.<name>.<i>
                let name = match flag_key.rsplit_once('.') {
                    Some((n, i)) if i.parse::<usize>().is_ok() => n,
                    _ => flag_key,
                };
                let known = flags.iter().any(|f| f.name == name) || name == "out";
                if known && !cli_set.iter().any(|s| s == name) {
                    out.flags.entry(name.to_string()).or_default().push(value.to_string());
                }
            } else if let Some(idx) = key.strip_prefix("arg.") {
                if let Ok(i) = idx.parse::<usize>() {
                    manifest_pos.insert(i, value.to_string());
                }
            }
        }
        if out.positionals.is_empty() {
            out.positionals = manifest_pos.into_values().collect();
        }
    }
    Ok(out)
}

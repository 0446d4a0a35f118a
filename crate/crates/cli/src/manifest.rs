//! Run manifests.
//!
//! Every command that writes an artifact drops a `<output>.manifest`
//! next to it: sorted key=value lines holding the command name, every
//! resolved flag, positional inputs, outputs, the base-model fingerprint
//! when one is involved, the seed and the tool version. Feeding the file
//! back through `--manifest` replays the run; equal manifests reproduce
//! byte-identical outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use svdiff_linalg::error::Result;

use crate::args::Parsed;

pub struct ManifestBuilder {
    entries: BTreeMap<String, String>,
}

impl ManifestBuilder {
    pub fn new(command: &str, parsed: &Parsed, seed: u64) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert("command".into(), command.to_string());
        entries.insert("seed".into(), seed.to_string());
        entries.insert("tool_version".into(), env!("CARGO_PKG_VERSION").to_string());
        for (name, values) in parsed.resolved() {
            if name == "manifest" {
                continue;
            }
            if values.len() == 1 {
                entries.insert(format!("flag.{name}"), values[0].clone());
            } else {
                for (i, v) in values.iter().enumerate() {
                    entries.insert(format!("flag.{name}.{i}"), v.clone());
                }
            }
        }
        for (i, p) in parsed.positionals.iter().enumerate() {
            entries.insert(format!("arg.{i}"), p.clone());
        }
        Self { entries }
    }

    pub fn fingerprint(mut self, fp: u64) -> Self {
        self.entries.insert("fingerprint".into(), format!("{fp:#018x}"));
        self
    }

    pub fn output(mut self, idx: usize, path: &Path) -> Self {
        self.entries.insert(format!("output.{idx}"), path.display().to_string());
        self
    }

    pub fn note(mut self, key: &str, value: &str) -> Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Writes `<primary_output>.manifest`.
    pub fn write_for(&self, primary_output: &Path) -> Result<PathBuf> {
        let mut path = primary_output.as_os_str().to_owned();
        path.push(".manifest");
        let path = PathBuf::from(path);
        std::fs::write(&path, self.render())?;
        Ok(path)
    }
}

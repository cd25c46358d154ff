//! The frozen `run.conf` written into every output directory.
//!
//! It holds `run.*` keys for the command and its options, followed by the
//! full training configuration. The same file is accepted by `--arch`, which
//! skips the `run.*` keys, so a run can be repeated from its own output.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

use moc_core::train::{parse_pairs, TrainingConfig};
use moc_core::{Error, Result};

pub const RUN_CONFIG_FILE: &str = "run.conf";

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    entries: Vec<(String, String)>,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        let mut c = RunConfig::default();
        c.set("command", command);
        c
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.entries.push((format!("run.{key}"), value.to_string()));
        self
    }

    pub fn training(&mut self, cfg: &TrainingConfig) -> &mut Self {
        self.entries.extend(cfg.to_pairs());
        self
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RUN_CONFIG_FILE);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::Io { path, source: e })
    }
}

/// Reads an `--arch` file into training-config overrides.
pub fn read_arch(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut pairs = parse_pairs(&text, &path.display().to_string())?;
    pairs.retain(|k, _| !k.starts_with("run."));
    Ok(pairs)
}

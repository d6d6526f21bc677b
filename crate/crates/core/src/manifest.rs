//! Run manifests: everything needed to repeat a command.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub const ARTIFACT_VERSION: &str = concat!("abd-core ", env!("CARGO_PKG_VERSION"));
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand name, e.g. `train-policy`.
    pub command: String,
    /// Command arguments after defaults and flag overrides.
    pub args: serde_json::Value,
    /// Merged training or regression config, if the command has one.
    pub config: serde_json::Value,
    pub seed: u64,
    pub morphology_hash: Option<String>,
    pub out_dir: PathBuf,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub deterministic: bool,
    pub workers: Option<usize>,
    pub artifact_version: String,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, out_dir: &Path) -> Self {
        Self {
            command: command.to_string(),
            args: serde_json::Value::Null,
            config: serde_json::Value::Null,
            seed,
            morphology_hash: None,
            out_dir: out_dir.to_path_buf(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            deterministic: false,
            workers: None,
            artifact_version: ARTIFACT_VERSION.to_string(),
        }
    }

    /// Write `manifest.json` under `out_dir`, creating the directory.
    pub fn write(&self) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

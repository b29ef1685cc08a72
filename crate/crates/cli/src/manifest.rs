use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Record of one invocation, written next to its primary output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub subcommand: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    /// Directory the relative paths in `args` resolve against.
    pub working_dir: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Every option after defaults and derived values are filled in.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
}

/// `results/model.json` -> `results/model.manifest.json`.
pub fn manifest_path(primary: &Path) -> PathBuf {
    primary.with_extension("manifest.json")
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn write(&self, primary: &Path) -> Result<PathBuf> {
        let path = manifest_path(primary);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

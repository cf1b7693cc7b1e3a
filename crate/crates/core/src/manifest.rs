//! Run manifest: written into the output directory before any long
//! computation starts. The config snapshot plus the master seed are enough
//! to reproduce a run bit-for-bit.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::WorkbenchConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Subcommand that produced the run.
    pub command: String,
    pub created_unix_s: u64,
    pub master_seed: u64,
    pub out_dir: String,
    /// Checkpoint consumed (evaluate/simulate/policy-map) or produced (train).
    pub checkpoint: Option<String>,
    /// Command-specific settings (episode counts, modes, grid, ...).
    pub details: serde_json::Value,
    /// Resolved configuration snapshot.
    pub config: WorkbenchConfig,
}

impl RunManifest {
    pub fn new(
        command: &str,
        master_seed: u64,
        out_dir: &Path,
        checkpoint: Option<&Path>,
        details: serde_json::Value,
        config: &WorkbenchConfig,
    ) -> Self {
        let created_unix_s = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            created_unix_s,
            master_seed,
            out_dir: out_dir.display().to_string(),
            checkpoint: checkpoint.map(|p| p.display().to_string()),
            details,
            config: config.clone(),
        }
    }

    /// Write `manifest.json` into the output directory.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("manifest serialize: {e}")))?;
        std::fs::write(&path, text)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("manifest parse: {e}")))
    }
}

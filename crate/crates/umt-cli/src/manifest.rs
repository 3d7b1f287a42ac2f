//! Run manifests: every command records the artifacts it emitted, the
//! config digest and the code version, so any output file traces back to
//! exactly one run.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use umt_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub config_digest: String,
    /// Unix seconds; informational only and excluded from reproducibility
    /// comparisons.
    pub created_unix: u64,
    /// Paths relative to the manifest's directory.
    pub artifacts: Vec<String>,
    /// Command-specific payload (per-seed results, timings, ...).
    pub details: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config_digest: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: format!("{config_digest:#018x}"),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            artifacts: Vec::new(),
            details: serde_json::Value::Null,
        }
    }

    pub fn add_artifact(&mut self, root: &Path, path: &Path) {
        let rel = path.strip_prefix(root).unwrap_or(path);
        self.artifacts.push(rel.to_string_lossy().into_owned());
    }

    /// Writes `run_manifest.json` under `root` after checking that every
    /// referenced artifact actually exists. (Datasets keep their own
    /// `manifest.json`; the distinct name avoids clobbering it.)
    pub fn write(&self, root: &Path) -> Result<PathBuf> {
        for rel in &self.artifacts {
            let path = root.join(rel);
            if !path.exists() {
                return Err(Error::corrupt(format!(
                    "manifest references missing artifact {}",
                    path.display()
                )));
            }
        }
        let path = root.join("run_manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

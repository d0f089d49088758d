//! The per-run record written next to every run's outputs.

use emdnerf::config::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Source revision, when the build environment provided one.
    pub revision: Option<String>,
    pub seed: Option<u64>,
    /// Canonical `key = value` text of the effective config.
    pub config: String,
    pub config_hash: String,
    pub dataset: String,
    /// Output name to relative path.
    pub outputs: Vec<(String, String)>,
    pub status: String,
    pub steps_completed: u64,
    pub started_unix: u64,
    pub elapsed_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &TrainConfig, dataset: &Path) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            revision: option_env!("EMDNERF_REVISION").map(String::from),
            seed: cfg.seed,
            config: cfg.to_kv(),
            config_hash: cfg.hash(),
            dataset: dataset.display().to_string(),
            outputs: Vec::new(),
            status: "running".into(),
            steps_completed: 0,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            elapsed_secs: 0.0,
        }
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        crate::write_file(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)
    }
}

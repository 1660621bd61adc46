//! The run manifest: which config produced which artifacts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    #[serde(default)]
    pub suite: Vec<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub results: Vec<String>,
    #[serde(default)]
    pub report: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub strategies: Vec<String>,
    /// Paths relative to the output directory.
    pub artifacts: Artifacts,
    pub status: Status,
    #[serde(default)]
    pub failure: Option<String>,
}

impl Manifest {
    pub fn new(config: &RunConfig) -> Self {
        Manifest {
            version: conflict_decode_core::VERSION.to_string(),
            schema_version: config.schema_version,
            config_hash: config.hash(),
            seed: config.seed,
            strategies: config.strategies.iter().map(ToString::to_string).collect(),
            artifacts: Artifacts::default(),
            status: Status::Ok,
            failure: None,
        }
    }

    /// The manifest already in `dir` if it was produced by the same config,
    /// otherwise a fresh one.
    pub fn open(dir: &Path, config: &RunConfig) -> Self {
        let fresh = Self::new(config);
        match Self::read(dir) {
            Some(existing) if existing.config_hash == fresh.config_hash => Manifest {
                status: Status::Ok,
                failure: None,
                ..existing
            },
            _ => fresh,
        }
    }

    pub fn read(dir: &Path) -> Option<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn fail(&mut self, reason: &str) {
        self.status = Status::Failed;
        self.failure = Some(reason.to_string());
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
        Ok(())
    }
}

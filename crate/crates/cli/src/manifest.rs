use std::fs;
use std::path::Path;

use perspective_core::trainer::CSV_SCHEMA;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_SCHEMA: &str = "perspective-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Train,
    Test,
    Analyze,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Link to the manifest of the stage this one consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentLink {
    pub dir: String,
    pub manifest_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub stage: Stage,
    pub csv_schema: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub period: Option<usize>,
    pub learning: Option<bool>,
    pub parent: Option<ParentLink>,
    pub files: Vec<FileEntry>,
    pub wall_clock_secs: f64,
}

impl Manifest {
    pub fn new(stage: Stage, config: &RunConfig) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.to_string(),
            stage,
            csv_schema: CSV_SCHEMA.to_string(),
            config_hash: config.experiment().hash(),
            config: config.clone(),
            seeds: config.train.seeds.clone(),
            period: None,
            learning: None,
            parent: None,
            files: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    /// Hashes `dir/name` and lists it.
    pub fn record(&mut self, dir: &Path, name: &str) -> Result<(), CliError> {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(CliError::io(&path))?;
        self.files.push(FileEntry {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn file(&self, name: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == name)
    }

    pub fn write(&self, dir: &Path) -> Result<String, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        fs::write(&path, &json).map_err(CliError::io(&path))?;
        Ok(sha256_hex(&json))
    }

    /// Reads `dir/manifest.json`, checking schema versions and the stage.
    pub fn read(dir: &Path, stage: Stage) -> Result<(Self, String), CliError> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if manifest.schema != MANIFEST_SCHEMA {
            return Err(CliError::Input(format!(
                "{}: manifest schema `{}`, expected `{MANIFEST_SCHEMA}`",
                path.display(),
                manifest.schema
            )));
        }
        if manifest.csv_schema != CSV_SCHEMA {
            return Err(CliError::Input(format!(
                "{}: CSV schema `{}`, expected `{CSV_SCHEMA}`",
                path.display(),
                manifest.csv_schema
            )));
        }
        if manifest.stage != stage {
            return Err(CliError::Input(format!(
                "{}: expected a {stage:?} manifest, found {:?}",
                path.display(),
                manifest.stage
            )));
        }
        Ok((manifest, sha256_hex(&bytes)))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

//! Per-directory manifests: configuration, code version and artifact hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// File name to SHA-256 of its contents.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hashes every file directly inside `dir` (except the manifest itself) and
/// writes `dir/manifest.json`.
pub fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let mut artifacts = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if path.is_file() && name != MANIFEST_FILE {
            artifacts.insert(name, sha256_file(&path)?);
        }
    }
    let mut config = cfg.clone();
    config.out = PathBuf::new();
    config.jobs = 1;
    let manifest = Manifest {
        command: command.to_string(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        config,
        artifacts,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

//! Run manifests: enough provenance to re-execute a run bit-identically.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub engine_version: String,
    pub config: RunConfig,
    pub inputs: Vec<InputDigest>,
    pub artifacts: Vec<String>,
    pub wall_clock_s: f64,
}

pub struct ManifestBuilder {
    command: String,
    config: RunConfig,
    inputs: Vec<InputDigest>,
    artifacts: Vec<PathBuf>,
    started: Instant,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes =
        std::fs::read(path).map_err(|_| CliError::missing(path.display().to_string()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{:02x}", b)).collect())
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn record_artifact(&mut self, path: &Path) {
        self.artifacts.push(path.to_path_buf());
    }

    /// Write `manifest.json` plus the resolved config alongside the outputs.
    pub fn finish(self, out_dir: &Path) -> Result<(), CliError> {
        let config_json = serde_json::to_string_pretty(&self.config)
            .map_err(|e| CliError::internal(e.to_string()))?;
        std::fs::write(out_dir.join("resolved_config.json"), &config_json)
            .map_err(|e| CliError::internal(e.to_string()))?;

        // Run id: digest of command, config and input digests.
        let mut hasher = Sha256::new();
        hasher.update(self.command.as_bytes());
        hasher.update(config_json.as_bytes());
        for input in &self.inputs {
            hasher.update(input.sha256.as_bytes());
        }
        let run_id: String = hasher
            .finalize()
            .iter()
            .take(8)
            .map(|b| format!("{:02x}", b))
            .collect();

        let manifest = RunManifest {
            run_id,
            command: self.command,
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config,
            inputs: self.inputs,
            artifacts: self
                .artifacts
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        std::fs::write(
            out_dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).map_err(|e| CliError::internal(e.to_string()))?,
        )
        .map_err(|e| CliError::internal(e.to_string()))?;
        Ok(())
    }
}

/// Verify recorded digests still match the files on disk.
pub fn verify_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let manifest: RunManifest = serde_json::from_str(
        &std::fs::read_to_string(path).map_err(|_| CliError::missing(path.display().to_string()))?,
    )
    .map_err(|e| CliError::input(format!("manifest {}: {}", path.display(), e)))?;
    for input in &manifest.inputs {
        let recomputed = sha256_file(Path::new(&input.path))?;
        if recomputed != input.sha256 {
            return Err(CliError::input(format!(
                "digest mismatch for {}: manifest {} vs file {}",
                input.path, input.sha256, recomputed
            )));
        }
    }
    Ok(manifest)
}

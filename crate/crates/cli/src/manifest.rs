use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mvop_core::io::file_sha256;
use mvop_core::{MvopError, Result};
use serde::{Deserialize, Serialize};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Effective configuration as canonical JSON.
    pub config: serde_json::Value,
    pub config_hash: String,
    pub root_seed: u64,
    pub versions: Vec<(String, String)>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn digest_all(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: file_sha256(p)?,
            })
        })
        .collect()
}

/// Records input digests at construction and re-verifies them on finish.
pub struct RunRecorder {
    command: String,
    config: serde_json::Value,
    config_hash: String,
    seed: u64,
    input_paths: Vec<PathBuf>,
    inputs: Vec<FileDigest>,
    started: u64,
}

impl RunRecorder {
    pub fn start<C: Serialize>(command: &str, config: &C, seed: u64, inputs: &[PathBuf]) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let config_hash = mvop_core::io::sha256_hex(serde_json::to_string(&config)?.as_bytes());
        Ok(Self {
            command: command.into(),
            config,
            config_hash,
            seed,
            input_paths: inputs.to_vec(),
            inputs: digest_all(inputs)?,
            started: now(),
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Verify the inputs and write the manifest to `path`.
    pub fn finish(self, path: &Path, outputs: &[PathBuf]) -> Result<RunManifest> {
        let after = digest_all(&self.input_paths)?;
        if after != self.inputs {
            return Err(MvopError::validation(
                "an input file changed while the command was running",
            ));
        }
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            config_hash: self.config_hash,
            root_seed: self.seed,
            versions: vec![
                ("mvop-cli".into(), env!("CARGO_PKG_VERSION").into()),
                ("mvop-core".into(), mvop_core::VERSION.into()),
            ],
            inputs: self.inputs,
            outputs: digest_all(outputs)?,
            started_unix: self.started,
            finished_unix: now(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(manifest)
    }
}

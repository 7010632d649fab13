//! Run manifests: what was run, on what, and what came out.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exit::CliResult;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Command line as invoked, enough to re-run the stage.
    pub argv: Vec<String>,
    /// Canonical JSON of the effective configuration.
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub checks: Vec<CheckSummary>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> CliResult<FileHash> {
    Ok(FileHash {
        path: path.to_path_buf(),
        sha256: sha256_hex(&std::fs::read(path)?),
    })
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, config_json: &str, seed: u64, threads: Option<usize>) -> CliResult<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv: std::env::args().collect(),
            config: serde_json::from_str(config_json)?,
            config_sha256: sha256_hex(config_json.as_bytes()),
            seed,
            threads,
            started_unix: unix_now(),
            finished_unix: 0,
            inputs: Vec::new(),
            outputs: Vec::new(),
            checks: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(hash_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.push(hash_file(path)?);
        Ok(())
    }

    pub fn check(&mut self, name: &str, passed: bool) {
        self.checks.push(CheckSummary {
            name: name.to_string(),
            passed,
        });
    }

    /// Writes `manifest_<command>.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> CliResult<PathBuf> {
        self.finished_unix = unix_now();
        let path = dir.join(format!("manifest_{}.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(&self)?)?;
        Ok(path)
    }
}

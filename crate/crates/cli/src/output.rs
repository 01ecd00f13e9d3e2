//! Output directory bookkeeping: atomic writes and the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const TOOL_NAME: &str = "oscope";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub tool: String,
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub stages: Vec<String>,
    /// Output path relative to the run directory -> SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::from_io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::from_io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::from_io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::from_io(path, e.error))?;
    Ok(())
}

/// Writes outputs under one directory and tracks their digests.
pub struct RunOutput {
    dir: PathBuf,
    manifest: RunManifest,
}

impl RunOutput {
    /// Continues an existing manifest written from the same config, or
    /// starts a new one.
    pub fn open(dir: PathBuf, name: &str, seed: u64, config_bytes: &[u8]) -> Result<Self, CliError> {
        let config_sha256 = sha256_hex(config_bytes);
        let fresh = RunManifest {
            name: name.to_string(),
            tool: TOOL_NAME.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: config_sha256.clone(),
            seed,
            stages: Vec::new(),
            outputs: BTreeMap::new(),
        };
        let manifest = match read_manifest(&dir) {
            Ok(m) if m.config_sha256 == config_sha256 && m.tool_version == fresh.tool_version => m,
            _ => fresh,
        };
        Ok(Self { dir, manifest })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.dir.join(rel), bytes)?;
        self.manifest.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Compute(e.to_string()))?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// Records a file written by a core routine (already atomic).
    pub fn record(&mut self, rel: &str) -> Result<(), CliError> {
        let p = self.dir.join(rel);
        let bytes = std::fs::read(&p).map_err(|e| CliError::from_io(&p, e))?;
        self.manifest.outputs.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn stage_done(&mut self, stage: &str) -> Result<(), CliError> {
        if !self.manifest.stages.iter().any(|s| s == stage) {
            self.manifest.stages.push(stage.to_string());
        }
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).map_err(|e| CliError::Compute(e.to_string()))?;
        bytes.push(b'\n');
        write_atomic(&self.dir.join(MANIFEST_FILE), &bytes)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let p = dir.join(MANIFEST_FILE);
    let bytes = std::fs::read(&p).map_err(|e| CliError::from_io(&p, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Compute(format!("{}: {e}", p.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_tracks_digests_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = RunOutput::open(dir.path().to_path_buf(), "t", 1, b"cfg").unwrap();
        out.write("a/b.txt", b"hello").unwrap();
        out.stage_done("forge").unwrap();
        let m = read_manifest(dir.path()).unwrap();
        assert_eq!(m.outputs["a/b.txt"], sha256_hex(b"hello"));
        assert_eq!(m.stages, vec!["forge"]);

        let mut again = RunOutput::open(dir.path().to_path_buf(), "t", 1, b"cfg").unwrap();
        again.stage_done("probe").unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap().stages, vec!["forge", "probe"]);

        let other = RunOutput::open(dir.path().to_path_buf(), "t", 1, b"other").unwrap();
        assert!(other.manifest.stages.is_empty());
    }
}

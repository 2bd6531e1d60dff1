//! Run manifest: config hash, seeds, version, stage timings and a hashed
//! inventory of the files a command wrote.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::Result;

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub phantom_seed: u64,
    pub parallel: bool,
    pub timings: Vec<StageTiming>,
    pub files: Vec<FileEntry>,
    pub warnings: Vec<String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex(&Sha256::digest(&json))
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: config_hash(cfg),
            seed: cfg.seed,
            phantom_seed: cfg.phantom.seed,
            parallel: cfg.parallel,
            timings: Vec::new(),
            files: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn time(&mut self, stage: &str, seconds: f64) {
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds,
        });
    }

    /// Hashes `paths`, recorded relative to `root`.
    pub fn add_files(&mut self, root: &Path, paths: &[PathBuf]) -> Result<()> {
        for p in paths {
            let bytes = std::fs::read(p).map_err(|e| rhomap_core::Error::io(p, e))?;
            self.files.push(FileEntry {
                path: p.strip_prefix(root).unwrap_or(p).display().to_string(),
                bytes: bytes.len() as u64,
                sha256: hex(&Sha256::digest(&bytes)),
            });
        }
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json).map_err(|e| rhomap_core::Error::io(&path, e))?;
        Ok(path)
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the run directory, with forward slashes.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub skipped: bool,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    /// Every emitted file, including the config copy.
    pub files: Vec<FileEntry>,
    pub complete: bool,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(config_hash: String, versions: BTreeMap<String, String>) -> Self {
        RunManifest {
            config_hash,
            versions,
            stages: Vec::new(),
            files: Vec::new(),
            complete: false,
            failed_stage: None,
            error: None,
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map(Some).map_err(|e| Error::Format {
            path,
            message: e.to_string(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Files whose on-disk checksum no longer matches the inventory.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.files {
            let p = dir.join(&f.path);
            if !p.exists() || file_sha256(&p)? != f.sha256 {
                bad.push(f.path.clone());
            }
        }
        Ok(bad)
    }
}

pub fn entry(dir: &Path, rel: &str) -> Result<FileEntry> {
    let p = dir.join(rel);
    let bytes = std::fs::metadata(&p).map_err(|e| Error::io(&p, e))?.len();
    Ok(FileEntry {
        path: rel.to_string(),
        sha256: file_sha256(&p)?,
        bytes,
    })
}

/// True when every listed file exists with the recorded checksum.
pub fn entries_match(dir: &Path, entries: &[FileEntry]) -> bool {
    entries.iter().all(|f| {
        let p = dir.join(&f.path);
        p.exists() && file_sha256(&p).map(|h| h == f.sha256).unwrap_or(false)
    })
}

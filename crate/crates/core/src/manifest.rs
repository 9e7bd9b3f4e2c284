//! Run manifests: one JSON record per artifact directory describing what
//! produced it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Config, ProtocolSpec};
use crate::datasets::{CorpusSpec, MANIFEST_FILE};
use crate::error::{Error, IoContext, Result};

pub const RUN_MANIFEST: &str = "run.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Corpus,
    Train,
    Eval,
    Ablation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: ArtifactKind,
    pub tool_version: String,
    pub created_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_spec: Option<CorpusSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Config>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolSpec>,
    pub corpus_path: PathBuf,
    pub corpus_sha256: String,
    pub seeds: Vec<u64>,
    /// Set for evaluation outputs: the run directory that was scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_run: Option<PathBuf>,
}

impl RunManifest {
    pub fn new(kind: ArtifactKind, corpus_path: &Path, seeds: Vec<u64>) -> Result<Self> {
        let corpus_path = fs::canonicalize(corpus_path).at(corpus_path)?;
        Ok(RunManifest {
            kind,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            corpus_spec: None,
            config: None,
            protocol: None,
            corpus_sha256: corpus_hash(&corpus_path)?,
            corpus_path,
            seeds,
            source_run: None,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        fs::write(&path, text + "\n").at(&path)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_MANIFEST);
        let text = fs::read_to_string(&path).at(&path)?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
    }

    /// Fails unless the corpus on disk still hashes to the recorded value.
    pub fn verify_corpus(&self) -> Result<()> {
        let now = corpus_hash(&self.corpus_path)?;
        if now != self.corpus_sha256 {
            return Err(Error::Parse {
                path: self.corpus_path.clone(),
                message: format!("corpus hash changed: recorded {}, found {now}", self.corpus_sha256),
            });
        }
        Ok(())
    }
}

/// SHA-256 over the corpus manifest and every feature file it lists, in
/// manifest order.
pub fn corpus_hash(dir: &Path) -> Result<String> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read(&mpath).at(&mpath)?;
    let listed: serde_json::Value = serde_json::from_slice(&text).map_err(|source| Error::Json {
        path: mpath.clone(),
        source,
    })?;
    let mut h = Sha256::new();
    h.update((text.len() as u64).to_le_bytes());
    h.update(&text);
    for v in listed["videos"].as_array().into_iter().flatten() {
        let rel = v["features"].as_str().ok_or_else(|| Error::Parse {
            path: mpath.clone(),
            message: "video entry without a features path".into(),
        })?;
        let path = dir.join(rel);
        let bytes = fs::read(&path).at(&path)?;
        h.update((rel.len() as u64).to_le_bytes());
        h.update(rel.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Creates `dir`, refusing to reuse a non-empty directory unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).at(dir)?.next().is_some();
        if non_empty && !force {
            return Err(Error::WouldClobber(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).at(dir)
}

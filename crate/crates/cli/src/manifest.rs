//! Per-run manifest written next to the artifacts.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use aawm::pipeline::Seeds;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Artifact {
    /// Relative to the output directory when inside it.
    pub path: String,
    pub sha256: String,
}

/// Wall-clock times; the only fields that differ between reruns.
#[derive(Debug, Serialize)]
pub struct Timestamps {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub library_version: String,
    pub deterministic: bool,
    pub master_seed: Option<u64>,
    pub config_digest: Option<String>,
    pub seeds: Option<Seeds>,
    pub inputs: Vec<String>,
    pub artifacts: Vec<Artifact>,
    pub exit_code: u8,
    pub error: Option<String>,
    pub timestamps: Timestamps,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn relative(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).display().to_string()
}

pub fn artifact(path: &Path, base: &Path) -> std::io::Result<Artifact> {
    let bytes = std::fs::read(path)?;
    Ok(Artifact {
        path: relative(path, base),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// `<out-dir>/<command>.manifest.json`.
pub fn manifest_path(out_dir: &Path, command: &str) -> PathBuf {
    out_dir.join(format!("{command}.manifest.json"))
}

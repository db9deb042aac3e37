//! Run manifests and content fingerprints.
//!
//! A manifest is written (status `running`) before training starts and
//! finalized afterwards; re-runs with identical config and dataset detect a
//! completed manifest and skip the work unless forced.

use crate::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};
use wavehdnn::trainer::TrainConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: TrainConfig,
    pub dataset_fingerprint: String,
    pub checkpoint_hash: Option<String>,
    pub started_at: u64,
    pub finished_at: Option<u64>,
    /// `running`, `complete`, or `aborted`.
    pub status: String,
}

pub fn now_epoch_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Files that make up a split archive, in hash order.
pub const ARCHIVE_FILES: &[&str] = &[
    "meta",
    "train.tsv",
    "val.tsv",
    "test.tsv",
    "id_map_users.tsv",
    "id_map_items.tsv",
];

/// Content hash over the split archive files.
pub fn fingerprint_archive(dir: &Path) -> CliResult<String> {
    let mut hasher = Sha256::new();
    for name in ARCHIVE_FILES {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update(std::fs::read(dir.join(name))?);
    }
    let out = hasher.finalize();
    Ok(out.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_manifest(run_dir: &Path, manifest: &RunManifest) -> CliResult<()> {
    std::fs::create_dir_all(run_dir)?;
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::Runtime(format!("manifest serialization: {e}")))?;
    std::fs::write(run_dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

pub fn read_manifest(run_dir: &Path) -> CliResult<Option<RunManifest>> {
    let path = run_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    let manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("bad manifest {}: {e}", path.display())))?;
    Ok(Some(manifest))
}

/// A completed manifest with the same config and dataset means the run can
/// be skipped.
pub fn matching_complete_run(
    run_dir: &Path,
    config: &TrainConfig,
    dataset_fingerprint: &str,
) -> CliResult<bool> {
    Ok(match read_manifest(run_dir)? {
        Some(m) => {
            m.status == "complete"
                && &m.config == config
                && m.dataset_fingerprint == dataset_fingerprint
        }
        None => false,
    })
}

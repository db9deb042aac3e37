//! `wavehdnn ingest`: raw TSV → split archive + statistics.

use crate::manifest::{fingerprint_archive, hex_digest, now_epoch_secs};
use crate::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use std::path::Path;
use wavehdnn::data::{
    compute_stats, load_interactions, remap_and_split, token_maps, write_archive, DatasetStats,
};

#[derive(Serialize, Deserialize, PartialEq)]
struct IngestManifest {
    input_hash: String,
    seed: u64,
    archive_fingerprint: String,
    created_at: u64,
}

const INGEST_MANIFEST: &str = "ingest.json";
const STATS_FILE: &str = "stats.json";

fn table_row(stats: &DatasetStats) -> String {
    format!(
        "users={} items={} interactions={} density={}",
        stats.num_users, stats.num_items, stats.num_interactions, stats.density_display
    )
}

pub fn cmd_ingest(input: &Path, out: &Path, seed: u64, force: bool) -> CliResult<()> {
    let input_bytes = std::fs::read(input)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", input.display())))?;
    let input_hash = hex_digest(&input_bytes);

    let manifest_path = out.join(INGEST_MANIFEST);
    if !force && manifest_path.exists() {
        let text = std::fs::read_to_string(&manifest_path)?;
        if let Ok(existing) = serde_json::from_str::<IngestManifest>(&text) {
            if existing.input_hash == input_hash && existing.seed == seed {
                let stats_text = std::fs::read_to_string(out.join(STATS_FILE))?;
                let stats: DatasetStats = serde_json::from_str(&stats_text)
                    .map_err(|e| CliError::Runtime(format!("bad stats.json: {e}")))?;
                println!("{}", table_row(&stats));
                println!("archive up to date at {} (use --force to redo)", out.display());
                return Ok(());
            }
        }
    }

    let raw = load_interactions(input)?;
    let ds = remap_and_split(&raw, seed);
    let (user_tokens, item_tokens) = token_maps(&raw);
    let stats = compute_stats(&ds);

    write_archive(&ds, &user_tokens, &item_tokens, out)?;
    let stats_json = serde_json::to_string_pretty(&stats)
        .map_err(|e| CliError::Runtime(format!("stats serialization: {e}")))?;
    std::fs::write(out.join(STATS_FILE), stats_json)?;

    let archive_fingerprint = fingerprint_archive(out)?;
    let manifest = IngestManifest {
        input_hash,
        seed,
        archive_fingerprint,
        created_at: now_epoch_secs(),
    };
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Runtime(format!("manifest serialization: {e}")))?,
    )?;

    println!("{}", table_row(&stats));
    Ok(())
}

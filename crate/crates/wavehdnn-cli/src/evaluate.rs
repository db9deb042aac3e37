//! `wavehdnn evaluate`: score a checkpoint against a split archive and print
//! the metrics report as JSON.

use crate::{config, train, CliError, CliResult};
use std::path::Path;
use wavehdnn::data::read_archive;
use wavehdnn::metrics::{evaluate, Split};
use wavehdnn::model::checkpoint;
use wavehdnn::trainer::{build_context, inference_embeddings, ModelKind, TrainConfig};

fn parse_ks(ks: &str) -> CliResult<Vec<usize>> {
    let parsed: Result<Vec<usize>, _> = ks
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect();
    let list = parsed.map_err(|_| CliError::Usage(format!("bad --ks list `{ks}`")))?;
    if list.is_empty() || list.contains(&0) {
        return Err(CliError::Usage("--ks must be positive integers".into()));
    }
    Ok(list)
}

pub fn cmd_evaluate(
    checkpoint_path: &Path,
    data: &Path,
    split: &str,
    config_path: Option<&Path>,
    ks: &str,
) -> CliResult<()> {
    let split: Split = split
        .parse()
        .map_err(|e: wavehdnn::Error| CliError::Usage(e.to_string()))?;
    let ks = parse_ks(ks)?;
    let ds = read_archive(data)?;
    let payload = checkpoint::load(checkpoint_path)?;

    let (ckpt_users, ckpt_items, ckpt_dim, ckpt_layers) = payload.dims();
    if ckpt_users != ds.num_users || ckpt_items != ds.num_items {
        let msg = format!(
            "checkpoint {}x{}xd{} vs dataset {}x{}",
            ckpt_users, ckpt_items, ckpt_dim, ds.num_users, ds.num_items
        );
        eprintln!("{msg}");
        return Err(CliError::Compat(msg));
    }

    // Config priority: explicit --config, then the manifest written next to
    // the checkpoint, then defaults. Structural fields always come from the
    // checkpoint header.
    let mut cfg: TrainConfig = match config_path {
        Some(p) => config::load_config(Some(p))?,
        None => {
            let run_dir = checkpoint_path.parent().unwrap_or(Path::new("."));
            match train::config_from_run_dir(run_dir)? {
                Some(cfg) => cfg,
                None => config::load_config(None)?,
            }
        }
    };
    cfg.layers = ckpt_layers;
    cfg.dim = ckpt_dim;
    cfg.model = match payload {
        checkpoint::CheckpointPayload::WaveHdnn(_) => ModelKind::WaveHdnn,
        checkpoint::CheckpointPayload::LightGcn(_) => ModelKind::LightGcn,
    };

    let ctx = build_context(&ds, &cfg)?;
    let (e_u, e_i) = inference_embeddings(&payload, &ctx, &cfg)?;
    let report = evaluate(&e_u, &e_i, &ds, split, &ks, cfg.seed)?;
    println!("{}", report.to_json());
    Ok(())
}

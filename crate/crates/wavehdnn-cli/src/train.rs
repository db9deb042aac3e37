//! `wavehdnn train`: seeded training runs with manifests, logs, checkpoints,
//! final reports, and a cross-seed aggregate.

use crate::manifest::{
    fingerprint_archive, hex_digest, matching_complete_run, now_epoch_secs, read_manifest,
    write_manifest, RunManifest,
};
use crate::{config, CliError, CliResult};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use wavehdnn::data::{read_archive, InteractionDataset};
use wavehdnn::metrics::{evaluate, MetricsReport, Split};
use wavehdnn::model::checkpoint;
use wavehdnn::trainer::{build_context, fit, inference_embeddings, TrainConfig};

pub const LOG_FILE: &str = "log.jsonl";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const VAL_REPORT_FILE: &str = "report_val.json";
pub const TEST_REPORT_FILE: &str = "report_test.json";
pub const AGGREGATE_FILE: &str = "aggregate.json";

/// Standard report cutoffs, clamped to what the dataset can rank.
pub fn feasible_ks(ds: &InteractionDataset, split: Split) -> Vec<usize> {
    let mut mask_sizes = vec![0usize; ds.num_users];
    let (relevant, masks): (&Vec<(usize, usize)>, Vec<&Vec<(usize, usize)>>) = match split {
        Split::Train => (&ds.train, vec![]),
        Split::Val => (&ds.val, vec![&ds.train]),
        Split::Test => (&ds.test, vec![&ds.train, &ds.val]),
    };
    for m in masks {
        for &(u, _) in m {
            mask_sizes[u] += 1;
        }
    }
    let mut min_unmasked = usize::MAX;
    let mut users: Vec<bool> = vec![false; ds.num_users];
    for &(u, _) in relevant {
        users[u] = true;
    }
    for u in 0..ds.num_users {
        if users[u] {
            min_unmasked = min_unmasked.min(ds.num_items - mask_sizes[u]);
        }
    }
    if min_unmasked == usize::MAX {
        return vec![10, 20, 40];
    }
    let standard: Vec<usize> = [10usize, 20, 40]
        .into_iter()
        .filter(|&k| k <= min_unmasked)
        .collect();
    if standard.is_empty() {
        vec![min_unmasked.max(1)]
    } else {
        standard
    }
}

/// Outcome of one seeded run.
pub struct RunOutcome {
    pub val_report: MetricsReport,
    pub test_report: MetricsReport,
    pub aborted: bool,
}

fn read_report(path: &Path) -> CliResult<MetricsReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("bad report {}: {e}", path.display())))
}

/// Train one seed into `run_dir`, or reuse a completed matching run.
pub fn train_single_run(
    ds: &InteractionDataset,
    cfg: &TrainConfig,
    run_dir: &Path,
    dataset_fingerprint: &str,
    force: bool,
) -> CliResult<RunOutcome> {
    if !force && matching_complete_run(run_dir, cfg, dataset_fingerprint)? {
        println!(
            "run {} is up to date (use --force to redo)",
            run_dir.display()
        );
        return Ok(RunOutcome {
            val_report: read_report(&run_dir.join(VAL_REPORT_FILE))?,
            test_report: read_report(&run_dir.join(TEST_REPORT_FILE))?,
            aborted: false,
        });
    }

    let run_id = run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let mut manifest = RunManifest {
        run_id,
        config: cfg.clone(),
        dataset_fingerprint: dataset_fingerprint.to_string(),
        checkpoint_hash: None,
        started_at: now_epoch_secs(),
        finished_at: None,
        status: "running".into(),
    };
    write_manifest(run_dir, &manifest)?;

    let result = fit(ds, cfg)?;

    let mut log = std::io::BufWriter::new(std::fs::File::create(run_dir.join(LOG_FILE))?);
    for record in &result.log {
        let line = serde_json::to_string(record)
            .map_err(|e| CliError::Runtime(format!("log serialization: {e}")))?;
        writeln!(log, "{line}")?;
    }
    log.flush()?;

    let ckpt_path = run_dir.join(CHECKPOINT_FILE);
    checkpoint::save(&ckpt_path, &result.best)?;
    let ckpt_bytes = std::fs::read(&ckpt_path)?;

    let ctx = build_context(ds, cfg)?;
    let (e_u, e_i) = inference_embeddings(&result.best, &ctx, cfg)?;
    let val_report = evaluate(&e_u, &e_i, ds, Split::Val, &feasible_ks(ds, Split::Val), cfg.seed)?;
    let test_report = evaluate(
        &e_u,
        &e_i,
        ds,
        Split::Test,
        &feasible_ks(ds, Split::Test),
        cfg.seed,
    )?;
    std::fs::write(run_dir.join(VAL_REPORT_FILE), val_report.to_json())?;
    std::fs::write(run_dir.join(TEST_REPORT_FILE), test_report.to_json())?;

    manifest.checkpoint_hash = Some(hex_digest(&ckpt_bytes));
    manifest.finished_at = Some(now_epoch_secs());
    manifest.status = if result.aborted_non_finite {
        "aborted".into()
    } else {
        "complete".into()
    };
    write_manifest(run_dir, &manifest)?;

    Ok(RunOutcome {
        val_report,
        test_report,
        aborted: result.aborted_non_finite,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub means: BTreeMap<String, f64>,
    pub stds: BTreeMap<String, f64>,
}

/// Cross-seed aggregate: per-metric mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: Vec<u64>,
    pub num_runs: usize,
    pub val: AggregateStats,
    pub test: AggregateStats,
}

pub fn aggregate_reports(reports: &[&MetricsReport]) -> AggregateStats {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for report in reports {
        for (k, &v) in &report.metrics {
            values.entry(k.clone()).or_default().push(v);
        }
    }
    let mut means = BTreeMap::new();
    let mut stds = BTreeMap::new();
    for (k, vs) in values {
        let n = vs.len() as f64;
        let mean = vs.iter().sum::<f64>() / n;
        let var = vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        means.insert(k.clone(), mean);
        stds.insert(k, var.sqrt());
    }
    AggregateStats { means, stds }
}

pub fn cmd_train(
    data: &Path,
    config_path: Option<&Path>,
    out: &Path,
    seeds: Option<u64>,
    force: bool,
) -> CliResult<()> {
    let ds = read_archive(data)?;
    let base_cfg = config::load_config(config_path)?;
    let fingerprint = fingerprint_archive(data)?;

    let seed_list: Vec<u64> = match seeds {
        None => vec![base_cfg.seed],
        Some(0) => return Err(CliError::Usage("--seeds must be at least 1".into())),
        Some(n) => (0..n).map(|k| base_cfg.seed + k).collect(),
    };

    std::fs::create_dir_all(out)?;
    let mut outcomes = Vec::new();
    let mut any_aborted = false;
    for &seed in &seed_list {
        let cfg = TrainConfig {
            seed,
            ..base_cfg.clone()
        };
        let run_dir = out.join(format!("seed_{seed}"));
        let outcome = train_single_run(&ds, &cfg, &run_dir, &fingerprint, force)?;
        any_aborted |= outcome.aborted;
        outcomes.push(outcome);
    }

    let aggregate = Aggregate {
        seeds: seed_list.clone(),
        num_runs: outcomes.len(),
        val: aggregate_reports(&outcomes.iter().map(|o| &o.val_report).collect::<Vec<_>>()),
        test: aggregate_reports(&outcomes.iter().map(|o| &o.test_report).collect::<Vec<_>>()),
    };
    std::fs::write(
        out.join(AGGREGATE_FILE),
        serde_json::to_string_pretty(&aggregate)
            .map_err(|e| CliError::Runtime(format!("aggregate serialization: {e}")))?,
    )?;

    for (seed, outcome) in seed_list.iter().zip(&outcomes) {
        println!(
            "seed {seed}: test {}",
            serde_json::to_string(&outcome.test_report.metrics)
                .unwrap_or_else(|_| "{}".into())
        );
    }
    if any_aborted {
        return Err(CliError::Runtime(
            "one or more runs aborted on non-finite numerics; manifests flag the partial runs".into(),
        ));
    }
    Ok(())
}

/// Recover a run's config from its manifest (used by `evaluate`).
pub fn config_from_run_dir(run_dir: &Path) -> CliResult<Option<TrainConfig>> {
    Ok(read_manifest(run_dir)?.map(|m| m.config))
}

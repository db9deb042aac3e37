//! `wavehdnn sweep`: train every cell of a hyperparameter grid and emit a
//! tidy long-form CSV (one row per cell × seed × split × metric).

use crate::manifest::fingerprint_archive;
use crate::train::{train_single_run, RunOutcome};
use crate::{config, CliError, CliResult};
use std::io::Write;
use std::path::Path;
use wavehdnn::data::read_archive;
use wavehdnn::trainer::TrainConfig;

pub const SWEEP_CSV: &str = "sweep.csv";

/// One grid axis: a config key plus its candidate values.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

/// Parse `key = v1,v2,v3` lines into axes.
pub fn parse_grid(text: &str) -> CliResult<Vec<GridAxis>> {
    let mut axes = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, values) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "grid line {}: expected `key = v1,v2,...`, got `{raw}`",
                lineno + 1
            ))
        })?;
        let key = key.trim().to_string();
        if !config::CONFIG_KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("unknown grid key `{key}`")));
        }
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(CliError::Usage(format!("grid key `{key}` has no values")));
        }
        axes.push(GridAxis { key, values });
    }
    if axes.is_empty() {
        return Err(CliError::Usage("grid file defines no axes".into()));
    }
    Ok(axes)
}

/// Cartesian product over axes as (key, value) assignments.
pub fn grid_cells(axes: &[GridAxis]) -> Vec<Vec<(String, String)>> {
    let mut cells: Vec<Vec<(String, String)>> = vec![vec![]];
    for axis in axes {
        let mut next = Vec::with_capacity(cells.len() * axis.values.len());
        for cell in &cells {
            for value in &axis.values {
                let mut extended = cell.clone();
                extended.push((axis.key.clone(), value.clone()));
                next.push(extended);
            }
        }
        cells = next;
    }
    cells
}

fn cell_id(cell: &[(String, String)]) -> String {
    cell.iter()
        .map(|(k, v)| format!("{k}{v}"))
        .collect::<Vec<_>>()
        .join("_")
}

fn csv_escape(value: &str) -> String {
    if value.contains([',', '"', '\n']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

pub fn cmd_sweep(
    data: &Path,
    grid: &Path,
    out: &Path,
    config_path: Option<&Path>,
    seeds: Option<u64>,
    force: bool,
) -> CliResult<()> {
    let grid_text = std::fs::read_to_string(grid)
        .map_err(|e| CliError::Usage(format!("cannot read grid {}: {e}", grid.display())))?;
    let axes = parse_grid(&grid_text)?;
    let cells = grid_cells(&axes);

    let ds = read_archive(data)?;
    let base_cfg = config::load_config(config_path)?;
    let fingerprint = fingerprint_archive(data)?;
    let num_seeds = match seeds {
        None => 1,
        Some(0) => return Err(CliError::Usage("--seeds must be at least 1".into())),
        Some(n) => n,
    };

    std::fs::create_dir_all(out)?;
    let axis_keys: Vec<String> = axes.iter().map(|a| a.key.clone()).collect();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut failures = 0usize;
    let mut successes = 0usize;

    for cell in &cells {
        let id = cell_id(cell);
        let mut cell_cfg = base_cfg.clone();
        let mut cell_ok = true;
        for (key, value) in cell {
            if let Err(e) = config::apply_key(&mut cell_cfg, key, value) {
                log::warn!("cell {id}: {e}; skipping");
                cell_ok = false;
                break;
            }
        }
        if cell_ok {
            if let Err(e) = cell_cfg.validate() {
                log::warn!("cell {id}: {e}; skipping");
                cell_ok = false;
            }
        }
        if !cell_ok {
            failures += 1;
            continue;
        }

        for k in 0..num_seeds {
            let seed = base_cfg.seed + k;
            let cfg = TrainConfig {
                seed,
                ..cell_cfg.clone()
            };
            let run_dir = out.join("cells").join(&id).join(format!("seed_{seed}"));
            let outcome: CliResult<RunOutcome> =
                train_single_run(&ds, &cfg, &run_dir, &fingerprint, force);
            match outcome {
                Ok(outcome) => {
                    successes += 1;
                    for (split, report) in [
                        ("val", &outcome.val_report),
                        ("test", &outcome.test_report),
                    ] {
                        for (metric, value) in &report.metrics {
                            let mut row = vec![id.clone()];
                            for (_, v) in cell {
                                row.push(v.clone());
                            }
                            row.push(seed.to_string());
                            row.push(split.to_string());
                            row.push(metric.clone());
                            row.push(format!("{value}"));
                            rows.push(row);
                        }
                    }
                }
                Err(e) => {
                    log::warn!("cell {id} seed {seed} failed: {e}");
                    failures += 1;
                }
            }
        }
    }

    let csv_path = out.join(SWEEP_CSV);
    let mut w = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    let mut header = vec!["cell".to_string()];
    header.extend(axis_keys.iter().cloned());
    header.extend(["seed", "split", "metric", "value"].map(String::from));
    writeln!(
        w,
        "{}",
        header.iter().map(|h| csv_escape(h)).collect::<Vec<_>>().join(",")
    )?;
    for row in &rows {
        writeln!(
            w,
            "{}",
            row.iter().map(|c| csv_escape(c)).collect::<Vec<_>>().join(",")
        )?;
    }
    w.flush()?;
    println!(
        "sweep finished: {successes} run(s) ok, {failures} failed; csv at {}",
        csv_path.display()
    );

    if successes == 0 {
        return Err(CliError::Runtime("every sweep cell failed".into()));
    }
    Ok(())
}

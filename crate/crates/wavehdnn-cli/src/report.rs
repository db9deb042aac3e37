//! `wavehdnn report`: merge run aggregates into one comparison table.

use crate::manifest::read_manifest;
use crate::train::{Aggregate, AGGREGATE_FILE};
use crate::{CliError, CliResult};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

struct ReportRow {
    label: String,
    metrics: std::collections::BTreeMap<String, f64>,
}

fn load_row(dir: &Path) -> CliResult<Option<ReportRow>> {
    let path = dir.join(AGGREGATE_FILE);
    if !path.exists() {
        log::warn!("skipping {}: no {AGGREGATE_FILE}", dir.display());
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    let aggregate: Aggregate = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("bad aggregate {}: {e}", path.display())))?;

    // Label from the first seed's manifest when available, else the path.
    let label = aggregate
        .seeds
        .first()
        .and_then(|seed| read_manifest(&dir.join(format!("seed_{seed}"))).ok().flatten())
        .map(|m| {
            let ablation = m.config.ablation.as_str();
            if ablation == "full" {
                m.config.model.as_str().to_string()
            } else {
                format!("{}[{}]", m.config.model.as_str(), ablation)
            }
        })
        .unwrap_or_else(|| {
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| dir.display().to_string())
        });

    Ok(Some(ReportRow {
        label,
        metrics: aggregate.test.means,
    }))
}

pub fn cmd_report(runs: &[PathBuf], format: &str) -> CliResult<()> {
    let mut rows = Vec::new();
    for dir in runs {
        if let Some(row) = load_row(dir)? {
            rows.push(row);
        }
    }
    if rows.is_empty() {
        return Err(CliError::Usage(
            "no run directory contained an aggregate report".into(),
        ));
    }

    let columns: Vec<String> = {
        let set: BTreeSet<String> = rows
            .iter()
            .flat_map(|r| r.metrics.keys().cloned())
            .collect();
        set.into_iter().collect()
    };
    // Best (maximum) value per metric column, for markdown bolding.
    let best: Vec<Option<f64>> = columns
        .iter()
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.metrics.get(c).copied())
                .fold(None, |acc: Option<f64>, v| {
                    Some(acc.map_or(v, |a| a.max(v)))
                })
        })
        .collect();

    match format {
        "json" => {
            let objects: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    let mut obj = serde_json::Map::new();
                    obj.insert("model".into(), serde_json::Value::String(r.label.clone()));
                    for c in &columns {
                        if let Some(v) = r.metrics.get(c) {
                            obj.insert(
                                c.clone(),
                                serde_json::Number::from_f64(*v)
                                    .map(serde_json::Value::Number)
                                    .unwrap_or(serde_json::Value::Null),
                            );
                        }
                    }
                    serde_json::Value::Object(obj)
                })
                .collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&objects)
                    .map_err(|e| CliError::Runtime(e.to_string()))?
            );
        }
        "csv" => {
            let mut header = vec!["model".to_string()];
            header.extend(columns.iter().cloned());
            println!("{}", header.join(","));
            for r in &rows {
                let mut cells = vec![r.label.clone()];
                for c in &columns {
                    cells.push(
                        r.metrics
                            .get(c)
                            .map(|v| format!("{v}"))
                            .unwrap_or_default(),
                    );
                }
                println!("{}", cells.join(","));
            }
        }
        "md" => {
            let mut header = vec!["model".to_string()];
            header.extend(columns.iter().cloned());
            println!("| {} |", header.join(" | "));
            println!("|{}|", vec!["---"; header.len()].join("|"));
            for r in &rows {
                let mut cells = vec![r.label.clone()];
                for (c, best_v) in columns.iter().zip(&best) {
                    let cell = match r.metrics.get(c) {
                        Some(v) => {
                            let formatted = format!("{v:.5}");
                            // Bold the best value; ties all get bolded.
                            if rows.len() > 1 && best_v.is_some_and(|b| (v - b).abs() < 1e-15) {
                                format!("**{formatted}**")
                            } else {
                                formatted
                            }
                        }
                        None => String::new(),
                    };
                    cells.push(cell);
                }
                println!("| {} |", cells.join(" | "));
            }
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown report format `{other}` (expected json, csv, or md)"
            )));
        }
    }
    Ok(())
}

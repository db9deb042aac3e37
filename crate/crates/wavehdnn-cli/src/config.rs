//! Flat `key = value` training configuration files with environment
//! overrides.
//!
//! Every key mirrors a [`TrainConfig`] field; `#` starts a comment. Any key
//! can be overridden with a `WAVEHDNN_<KEY>` environment variable, e.g.
//! `WAVEHDNN_LR=0.01`.

use crate::{CliError, CliResult};
use std::path::Path;
use wavehdnn::trainer::TrainConfig;

/// Environment-variable prefix for config overrides.
pub const ENV_PREFIX: &str = "WAVEHDNN_";

/// Keys accepted in config files, env overrides, and sweep grids.
pub const CONFIG_KEYS: &[&str] = &[
    "model",
    "lr",
    "batch_size",
    "max_epochs",
    "patience",
    "eval_every",
    "lambda_cl",
    "lambda_reg",
    "tau",
    "layers",
    "dim",
    "wavelet_scale",
    "chebyshev_order",
    "wavelet_mode",
    "contrastive_negatives",
    "seed",
    "ablation",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("bad value `{value}` for config key `{key}`")))
}

/// Apply a single key/value pair onto a config.
pub fn apply_key(cfg: &mut TrainConfig, key: &str, value: &str) -> CliResult<()> {
    let value = value.trim();
    match key {
        "model" => cfg.model = value.parse().map_err(|e: wavehdnn::Error| CliError::Usage(e.to_string()))?,
        "lr" => cfg.lr = parse(key, value)?,
        "batch_size" => cfg.batch_size = parse(key, value)?,
        "max_epochs" => cfg.max_epochs = parse(key, value)?,
        "patience" => cfg.patience = parse(key, value)?,
        "eval_every" => cfg.eval_every = parse(key, value)?,
        "lambda_cl" => cfg.lambda_cl = parse(key, value)?,
        "lambda_reg" => cfg.lambda_reg = parse(key, value)?,
        "tau" => cfg.tau = parse(key, value)?,
        "layers" => cfg.layers = parse(key, value)?,
        "dim" => cfg.dim = parse(key, value)?,
        "wavelet_scale" => cfg.wavelet_scale = parse(key, value)?,
        "chebyshev_order" => cfg.chebyshev_order = parse(key, value)?,
        "wavelet_mode" => {
            cfg.wavelet_mode = value
                .parse()
                .map_err(|e: wavehdnn::Error| CliError::Usage(e.to_string()))?
        }
        "contrastive_negatives" => {
            cfg.contrastive_negatives = value
                .parse()
                .map_err(|e: wavehdnn::Error| CliError::Usage(e.to_string()))?
        }
        "seed" => cfg.seed = parse(key, value)?,
        "ablation" => {
            cfg.ablation = value
                .parse()
                .map_err(|e: wavehdnn::Error| CliError::Usage(e.to_string()))?
        }
        other => {
            return Err(CliError::Usage(format!("unknown config key `{other}`")));
        }
    }
    Ok(())
}

/// Parse config text on top of defaults.
pub fn parse_config(text: &str) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "config line {}: expected `key = value`, got `{raw}`",
                lineno + 1
            ))
        })?;
        apply_key(&mut cfg, key.trim(), value)?;
    }
    Ok(cfg)
}

/// Apply `WAVEHDNN_<KEY>` environment overrides.
pub fn apply_env_overrides(cfg: &mut TrainConfig) -> CliResult<()> {
    for key in CONFIG_KEYS {
        let var = format!("{ENV_PREFIX}{}", key.to_ascii_uppercase());
        if let Ok(value) = std::env::var(&var) {
            apply_key(cfg, key, &value)?;
        }
    }
    Ok(())
}

/// Load a config file (defaults when absent) and apply env overrides.
pub fn load_config(path: Option<&Path>) -> CliResult<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            parse_config(&text)?
        }
        None => TrainConfig::default(),
    };
    apply_env_overrides(&mut cfg)?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

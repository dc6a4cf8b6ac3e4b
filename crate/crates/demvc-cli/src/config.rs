//! Flat key=value config files layered under command-line overrides.

use crate::{usage, CliError, ConfigOverrides};
use demvc::train::TrainConfig;
use std::path::Path;

/// Reads a key=value file into a TrainConfig, starting from desk-scale
/// defaults. Lines are `key=value`; blank lines and #-comments are ignored.
pub fn load_config_file(path: &Path, base: TrainConfig) -> Result<TrainConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = base;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            usage(format!(
                "{} line {}: expected key=value, got '{line}'",
                path.display(),
                lineno + 1
            ))
        })?;
        cfg.set_key_value(key.trim(), value)
            .map_err(|e| usage(format!("{} line {}: {e}", path.display(), lineno + 1)))?;
    }
    Ok(cfg)
}

/// Applies command-line overrides on top of a config.
pub fn apply_overrides(mut cfg: TrainConfig, o: &ConfigOverrides) -> Result<TrainConfig, CliError> {
    if let Some(v) = o.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.batches_per_turn {
        cfg.batches_per_turn = v;
    }
    if let Some(v) = o.iters {
        cfg.total_finetune_iters = v;
    }
    if let Some(v) = o.pretrain_epochs {
        cfg.pretrain_epochs = v;
    }
    if let Some(v) = o.clusters {
        cfg.n_clusters = v;
    }
    if let Some(mode) = &o.mode {
        cfg.mode = mode.parse().map_err(usage)?;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.first_referred {
        cfg.first_referred_view = v;
    }
    if let Some(v) = o.consensus_threshold {
        cfg.consensus_threshold = v;
    }
    if let Some(v) = &o.hidden {
        cfg.hidden_dims = v.clone();
    }
    if let Some(v) = o.embed_dim {
        cfg.embed_dim = v;
    }
    Ok(cfg)
}

/// Builds the effective config for a command: the preset's defaults, then
/// the config file, then flags. `n_clusters` must come from one of them.
pub fn resolve(
    preset: &str,
    config_path: Option<&Path>,
    overrides: &ConfigOverrides,
) -> Result<TrainConfig, CliError> {
    // 0 marks "unset": validate() rejects it unless a file or flag sets it
    let mut cfg = match preset {
        "desk" => TrainConfig::desk_scale(0),
        "paper" => TrainConfig::paper_scale(0),
        other => {
            return Err(usage(format!(
                "unknown preset '{other}' (expected desk or paper)"
            )))
        }
    };
    if let Some(path) = config_path {
        cfg = load_config_file(path, cfg)?;
    }
    cfg = apply_overrides(cfg, overrides)?;
    if cfg.n_clusters == 0 {
        return Err(usage(
            "n_clusters is required (set --clusters or n_clusters= in the config file)",
        ));
    }
    Ok(cfg)
}

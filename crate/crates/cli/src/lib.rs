//! Command-line pipeline around the width-search library: dataset
//! generation, supernet training, prior-sampled evolutionary search,
//! retraining, analysis and plotting, all driven by one JSON config.

pub mod commands;
pub mod config;
pub mod svg;

use std::path::{Path, PathBuf};

use anyhow::Result;

use config::RunConfig;

/// Load a config and apply the command-line overrides; the returned config
/// is the effective one (its hash covers the overrides).
pub fn effective_config(
    config_path: &Path,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<(RunConfig, PathBuf)> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    if let Some(out) = out_override {
        config.output_dir = out.to_path_buf();
    }
    let out = config.output_dir.clone();
    Ok((config, out))
}

//! Run-config loading with field-path diagnostics.

use std::path::{Path, PathBuf};

use icopro::trainer::RunConfig;

use crate::{CliError, CliResult};

/// Parses a run config, reporting the JSON path of the first bad field.
pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
        location: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Runs the library's semantic checks, mapping failures to config errors.
pub fn validate(cfg: &RunConfig) -> CliResult<()> {
    cfg.validate().map_err(|e| CliError::Config { location: ".".into(), message: e.to_string() })
}

/// Loads a config file, applies a seed override and validates the result.
/// Returns the config and the directory relative paths resolve against.
pub fn load_config(path: &Path, seed: Option<u64>) -> CliResult<(RunConfig, PathBuf)> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    validate(&cfg)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

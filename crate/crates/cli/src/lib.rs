//! Configuration-driven runner for the anomaly-detection experiments.
//!
//! Every command works on a run directory. `train` writes the resolved
//! config, checkpoint(s), loss history and, with training noise, the noise
//! plan. `eval` re-derives the data from that config, so evaluating a run
//! directory twice gives identical numbers.

pub mod commands;
pub mod config;
pub mod error;

use std::path::{Path, PathBuf};

pub use config::{RawConfig, RunConfig};
pub use error::{CliError, CliResult};

/// The subcommand a configuration is being resolved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Generate,
    Synth,
}

/// Pulls `--config path` / `--config=path` out of free-form overrides.
fn take_config_flag(overrides: &[String]) -> CliResult<(Option<PathBuf>, Vec<String>)> {
    let mut path = None;
    let mut rest = Vec::new();
    let mut it = overrides.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            let v = it.next().ok_or_else(|| CliError::config("`--config` needs a value"))?;
            path = Some(PathBuf::from(v));
        } else if let Some(v) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(v));
        } else {
            rest.push(a.clone());
        }
    }
    Ok((path, rest))
}

/// Builds the run configuration from, in increasing priority: the config
/// file (for `eval` and `generate` without one, the run directory's own
/// resolved config), the global `--seed`/`--out` flags, then `--key value`
/// overrides.
pub fn resolve_config(
    command: Command,
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
    overrides: &[String],
    data_root_env: Option<&str>,
) -> CliResult<RunConfig> {
    let (late_config, overrides) = take_config_flag(overrides)?;
    let config = late_config.as_deref().or(config);
    let mut raw = match config {
        Some(path) => RawConfig::from_file(path)?,
        None => match (command, out) {
            (Command::Eval | Command::Generate, Some(dir)) => {
                let echoed = dir.join(config::RESOLVED_CONFIG_FILE);
                if !echoed.exists() {
                    return Err(CliError::config(format!("{} is not a run directory (no {})", dir.display(), config::RESOLVED_CONFIG_FILE)));
                }
                RawConfig::from_file(&echoed)?
            }
            _ => RawConfig::default(),
        },
    };
    if let Some(s) = seed {
        raw.set("seed", s.to_string())?;
    }
    if let Some(o) = out {
        raw.set("out", o.display().to_string())?;
    }
    raw.apply_overrides(&overrides)?;
    if command == Command::Synth {
        // the model is irrelevant to rendering data
        if raw.get("model").is_none() {
            raw.set("model", "kd-cae")?;
        }
        if raw.get("data.root").is_none() {
            raw.set("data.root", "synthetic")?;
        }
    }
    RunConfig::resolve(&raw, data_root_env.filter(|s| !s.is_empty()))
}

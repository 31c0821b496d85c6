//! Configuration loading and experiment orchestration for the `p2s` binary.
//!
//! A run primes a fresh policy, trains it under one reward mode and writes
//! `metrics.jsonl`, `checkpoint.json` and `summary.json` below
//! `<out_dir>/<run_id>`. The `compare` subcommand repeats that over a matrix
//! of seeds and methods and adds `comparison.csv` and `comparison.md`.

pub mod compare;
pub mod config;
pub mod error;
pub mod export;
pub mod runner;

use std::path::PathBuf;

use p2s_core::grpo::Mode;

pub use config::RunConfig;
pub use error::CliError;

/// Command-line overrides layered over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub ablate: Vec<String>,
}

/// Which subcommand the overrides are for; `--seed`, `--mode` and
/// `--ablate` act on the run matrix under `compare`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Single,
    Matrix,
}

/// Output directory precedence: `--out`, then `P2S_OUT_DIR`, then the file.
pub fn apply(mut config: RunConfig, o: &Overrides, target: Target) -> Result<RunConfig, CliError> {
    if let Some(dir) = o.out.clone().or_else(|| std::env::var_os("P2S_OUT_DIR").map(PathBuf::from)) {
        config.out_dir = dir;
    }
    match target {
        Target::Single => {
            if let Some(s) = o.seed {
                config.seed = Some(s);
            }
            if let Some(m) = o.mode {
                config.mode = m;
            }
            for tag in &o.ablate {
                config.ablations.disable(tag).map_err(|e| CliError::Config(vec![format!("--ablate: {e}")]))?;
            }
        }
        Target::Matrix => {
            if let Some(s) = o.seed {
                config.compare.seeds = vec![s];
            }
            if let Some(m) = o.mode {
                config.compare.modes = vec![m];
            }
            if !o.ablate.is_empty() {
                config.compare.ablations = o.ablate.iter().map(|t| vec![t.clone()]).collect();
            }
        }
    }
    let v = config.violations();
    if v.is_empty() {
        Ok(config)
    } else {
        Err(CliError::Config(v))
    }
}

/// Worker threads for the comparison matrix, from `P2S_WORKERS` (default 1).
pub fn workers() -> Result<usize, CliError> {
    match std::env::var("P2S_WORKERS") {
        Err(_) => Ok(1),
        Ok(s) => s
            .parse::<usize>()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| CliError::Config(vec![format!("P2S_WORKERS: expected a positive integer, got {s:?}")])),
    }
}

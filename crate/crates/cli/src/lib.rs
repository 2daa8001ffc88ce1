//! Experiment runner: reads an experiment description, runs the master
//! equations and/or the Monte-Carlo oracle, and writes data files.

pub mod config;
pub mod output;
pub mod presets;
pub mod run;

use std::path::{Path, PathBuf};

pub use config::{parse_config, ConfigError, ExperimentConfig, Scenario};
pub use output::write_outputs;
pub use presets::{preset, PRESET_NAMES};
pub use run::{simulate, RunData, RunError};

/// Output directory used when neither `--out` nor this variable is given is
/// `./qwalk-out/<experiment name>`.
pub const OUT_DIR_ENV: &str = "QWALK_OUT_DIR";

#[derive(Debug)]
pub struct RunReport {
    pub data: RunData,
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("writing outputs to {dir}: {source}")]
    Io { dir: PathBuf, source: std::io::Error },
}

/// Simulates `cfg` and writes its data files into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport, ExperimentError> {
    let data = simulate(cfg)?;
    let files = write_outputs(&data, out_dir).map_err(|source| ExperimentError::Io { dir: out_dir.to_path_buf(), source })?;
    Ok(RunReport { data, out_dir: out_dir.to_path_buf(), files })
}

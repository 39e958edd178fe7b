use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::config::RunConfig;

pub const RATES_CSV: &str = "rates.csv";
pub const IMPORTANCE_CSV: &str = "is_experiments.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const CONFIG_ECHO: &str = "config.toml";

pub fn prepare_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Write the effective configuration next to the results.
pub fn echo_config(cfg: &RunConfig, dir: &Path) -> anyhow::Result<PathBuf> {
    let path = dir.join(CONFIG_ECHO);
    fs::write(&path, cfg.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

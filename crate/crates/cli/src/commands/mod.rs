pub mod evaluate;
pub mod pathology;
pub mod recover;
pub mod segment;
pub mod simulate;
pub mod train_events;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nha_core::hybrid::{read_dataset, segments_from_bounds, Subtrajectory, Trajectory};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(nha_core::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub(crate) fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))
}

/// Reads and schema-checks a dataset; errors carry the offending line.
pub(crate) fn load_dataset(path: &Path) -> CliResult<Vec<Trajectory>> {
    if !path.is_file() {
        return Err(CliError::Config(format!(
            "dataset {} not found",
            path.display()
        )));
    }
    let data = read_dataset(path)?;
    if data.is_empty() {
        return Err(CliError::Config(format!(
            "dataset {} is empty",
            path.display()
        )));
    }
    Ok(data)
}

pub(crate) fn print_summary<T: Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(nha_core::Error::from)?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        // a closed reader (e.g. `| head`) is not an error
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(nha_core::Error::Io(e).into()),
        _ => Ok(()),
    }
}

/// `dir/name`, creating `dir`.
pub(crate) fn output_path(dir: &Path, name: &str) -> CliResult<PathBuf> {
    ensure_dir(dir)?;
    Ok(dir.join(name))
}

/// Maximal runs of one label, also cut at repeated timestamps so that
/// self-loop jumps split too. Each run carries its label as both the true
/// and the recovered mode.
pub(crate) fn label_runs(traj: &Trajectory) -> CliResult<Vec<Subtrajectory>> {
    let labels = traj
        .mode_labels
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("trajectory {} has no mode labels", traj.id)))?;
    let mut starts = vec![0];
    for i in 1..traj.len() {
        if labels[i] != labels[i - 1] || traj.times[i] == traj.times[i - 1] {
            starts.push(i);
        }
    }
    let bounds: Vec<(usize, usize)> = starts
        .iter()
        .enumerate()
        .map(|(k, &s)| (s, starts.get(k + 1).copied().unwrap_or(traj.len())))
        .collect();
    let mut segs = segments_from_bounds(traj, &bounds);
    for s in &mut segs {
        s.recovered_mode = s.true_mode;
    }
    Ok(segs)
}

pub(crate) fn parse_kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

use std::path::{Path, PathBuf};

use clap::Args;
use nha_core::derive_seed;
use nha_core::hybrid::{
    corrupt_segmentation, default_threshold, finite_difference_segment, segment_bounds,
    segments_from_bounds, Subtrajectory, Trajectory,
};
use serde::{Deserialize, Serialize};

use super::{load_dataset, print_summary, read_json, write_json};
use crate::config::{cli_seed, ExperimentConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Speed threshold; five times the median speed of each trajectory when unset.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Probability of moving each cut point.
    #[arg(long = "corrupt-p")]
    pub corrupt_p: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Index file; defaults to `<dataset stem>.segments.json` next to the dataset.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub id: String,
    /// Threshold actually used for this trajectory.
    pub threshold: f64,
    /// Half-open sample ranges `[start, end)`.
    pub bounds: Vec<(usize, usize)>,
    /// Segment count before corruption.
    pub n_clean_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentIndex {
    pub dataset: String,
    pub threshold: Option<f64>,
    pub corrupt_p: f64,
    pub seed: u64,
    pub trajectories: Vec<SegmentEntry>,
}

pub fn default_index_path(dataset: &Path) -> PathBuf {
    let stem = dataset
        .file_stem()
        .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
    dataset.with_file_name(format!("{stem}.segments.json"))
}

pub fn run(args: &SegmentArgs, cfg: &mut ExperimentConfig) -> CliResult<()> {
    if let Some(t) = args.threshold {
        cfg.segmentation.threshold = Some(t);
    }
    if let Some(p) = args.corrupt_p {
        cfg.segmentation.corrupt_p = p;
    }
    if let Some(seed) = cli_seed(args.seed) {
        cfg.segmentation.seed = seed;
    }
    let p = cfg.segmentation.corrupt_p;
    if !(0.0..=1.0).contains(&p) {
        return Err(CliError::Config(format!(
            "corrupt-p must lie in [0, 1], got {p}"
        )));
    }
    let data = load_dataset(&args.dataset)?;
    let mut entries = Vec::with_capacity(data.len());
    for (i, traj) in data.iter().enumerate() {
        let threshold = match cfg.segmentation.threshold {
            Some(t) => t,
            None => default_threshold(traj)?,
        };
        let clean = finite_difference_segment(traj, threshold)?;
        let segs = corrupt_segmentation(&clean, p, derive_seed(cfg.segmentation.seed, i as u64));
        entries.push(SegmentEntry {
            id: traj.id.clone(),
            threshold,
            bounds: segment_bounds(&segs),
            n_clean_segments: clean.len(),
        });
    }
    let index = SegmentIndex {
        dataset: args.dataset.display().to_string(),
        threshold: cfg.segmentation.threshold,
        corrupt_p: p,
        seed: cfg.segmentation.seed,
        trajectories: entries,
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| default_index_path(&args.dataset));
    write_json(&out, &index)?;
    print_summary(&serde_json::json!({
        "index": out.display().to_string(),
        "n_trajectories": index.trajectories.len(),
        "n_segments": index.trajectories.iter().map(|e| e.bounds.len()).sum::<usize>(),
        "n_clean_segments": index.trajectories.iter().map(|e| e.n_clean_segments).sum::<usize>(),
        "corrupt_p": p,
    }))
}

/// Segments of every trajectory in dataset order, per the index.
pub fn load_segments(data: &[Trajectory], index_path: &Path) -> CliResult<Vec<Vec<Subtrajectory>>> {
    if !index_path.is_file() {
        return Err(CliError::Config(format!(
            "segment index {} not found; run `nha segment` first",
            index_path.display()
        )));
    }
    let index: SegmentIndex = read_json(index_path)?;
    data.iter()
        .map(|traj| {
            let entry = index
                .trajectories
                .iter()
                .find(|e| e.id == traj.id)
                .ok_or_else(|| {
                    CliError::Config(format!("segment index has no entry for {}", traj.id))
                })?;
            if entry.bounds.iter().any(|&(s, e)| s >= e || e > traj.len()) {
                return Err(CliError::Config(format!(
                    "segment bounds of {} are out of range",
                    traj.id
                )));
            }
            Ok(segments_from_bounds(traj, &entry.bounds))
        })
        .collect()
}

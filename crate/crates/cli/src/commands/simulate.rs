use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use nha_core::events::edge_key;
use nha_core::hybrid::{write_dataset, Trajectory};
use nha_core::systems::{simulate_dataset, SystemKind};
use serde::Serialize;

use super::{ensure_dir, print_summary};
use crate::config::{cli_seed, ExperimentConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// tcp-reno, sls, toy or diff-drive.
    #[arg(long, value_parser = parse_system)]
    pub system: Option<SystemKind>,
    #[arg(long = "n-traj")]
    pub n_traj: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; defaults to `<output_dir>/dataset.jsonl`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn parse_system(s: &str) -> Result<SystemKind, String> {
    s.parse().map_err(|e: nha_core::Error| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct SimulateSummary {
    pub system: String,
    pub dataset: String,
    pub n_trajectories: usize,
    pub horizon: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub total_events: usize,
    /// Fired events per edge `z->z'`.
    pub edge_counts: BTreeMap<String, usize>,
    pub events_per_trajectory: Vec<usize>,
    /// Distinct modes visited by each trajectory.
    pub modes_visited: Vec<usize>,
}

pub fn run(args: &SimulateArgs, cfg: &mut ExperimentConfig) -> CliResult<()> {
    if let Some(s) = args.system {
        cfg.system = s;
    }
    if let Some(n) = args.n_traj {
        cfg.simulation.n_trajectories = n;
    }
    if let Some(h) = args.horizon {
        cfg.simulation.horizon = h;
    }
    if let Some(seed) = cli_seed(args.seed) {
        cfg.simulation.seed = seed;
    }
    if cfg.simulation.n_trajectories == 0 {
        return Err(CliError::Config("n-traj must be positive".into()));
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("dataset.jsonl"));
    let sols = simulate_dataset(cfg.system, &cfg.simulation)?;

    let mut edge_counts = BTreeMap::new();
    for ev in sols.iter().flat_map(|s| &s.events) {
        *edge_counts
            .entry(edge_key((ev.source.0, ev.target.0)))
            .or_insert(0) += 1;
    }
    let modes_visited = sols
        .iter()
        .map(|s| {
            let mut seen: Vec<usize> = s.mode_timeline.iter().map(|iv| iv.mode.0).collect();
            seen.sort_unstable();
            seen.dedup();
            seen.len()
        })
        .collect();
    let trajectories: Vec<Trajectory> = sols.iter().map(|s| s.trajectory.clone()).collect();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_dataset(&out, &trajectories)?;

    print_summary(&SimulateSummary {
        system: cfg.system.name().into(),
        dataset: out.display().to_string(),
        n_trajectories: sols.len(),
        horizon: cfg.simulation.horizon,
        seed: cfg.simulation.seed,
        n_samples: trajectories.iter().map(Trajectory::len).sum(),
        total_events: sols.iter().map(|s| s.events.len()).sum(),
        edge_counts,
        events_per_trajectory: sols.iter().map(|s| s.events.len()).collect(),
        modes_visited,
    })
}

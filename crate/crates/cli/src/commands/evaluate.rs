use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use nha_core::derive_seed;
use nha_core::events::{
    dwell_times, edge_key, simulate_nha, EventCheckpoint, EventModule, NhaSimConfig,
};
use nha_core::hybrid::{finite_difference_segment, Subtrajectory, Trajectory};
use nha_core::recovery::{evaluate_mse, NhaRecoveryModel, RecoveryCheckpoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{label_runs, load_dataset, print_summary, read_json, write_json};
use crate::config::{cli_seed, ExperimentConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// `recovery.ckpt.json` from `recover`.
    #[arg(long)]
    pub recovery: PathBuf,
    /// `events.ckpt.json` from `train-events`.
    #[arg(long)]
    pub events: PathBuf,
    /// Held-out trajectories, labelled in the recovered mode space.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulation horizon; each trajectory's own duration when unset.
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize)]
pub struct EventStats {
    pub total_time: f64,
    pub n_events: usize,
    /// Mean time between consecutive events, by the mode in between.
    pub dwell_means: BTreeMap<usize, f64>,
    pub dwell_counts: BTreeMap<usize, usize>,
    pub edge_counts: BTreeMap<String, usize>,
    /// Events per unit time, per edge.
    pub edge_rates: BTreeMap<String, f64>,
}

impl EventStats {
    fn finish(mut self, dwells: BTreeMap<usize, Vec<f64>>) -> Self {
        for (z, d) in dwells {
            self.dwell_counts.insert(z, d.len());
            self.dwell_means
                .insert(z, d.iter().sum::<f64>() / d.len() as f64);
        }
        if self.total_time > 0.0 {
            self.edge_rates = self
                .edge_counts
                .iter()
                .map(|(k, &c)| (k.clone(), c as f64 / self.total_time))
                .collect();
        }
        self
    }
}

#[derive(Debug, Serialize)]
pub struct Evaluation {
    pub seed: u64,
    pub n_trajectories: usize,
    pub data: Option<EventStats>,
    pub simulated: EventStats,
    /// Relative error of simulated against observed dwell means, per mode.
    pub dwell_relative_error: BTreeMap<usize, f64>,
    pub reconstruction_mse: f64,
}

/// Interior runs only: the first and last run of a trajectory are censored.
fn data_stats(data: &[Trajectory], runs: &[Vec<Subtrajectory>]) -> EventStats {
    let mut stats = EventStats::default();
    let mut dwells: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (traj, segs) in data.iter().zip(runs) {
        stats.total_time += traj.times.last().unwrap_or(&0.0) - traj.times.first().unwrap_or(&0.0);
        for pair in segs.windows(2) {
            let (a, b) = (pair[0].true_mode.unwrap().0, pair[1].true_mode.unwrap().0);
            *stats.edge_counts.entry(edge_key((a, b))).or_insert(0) += 1;
            stats.n_events += 1;
        }
        if segs.len() > 2 {
            for s in &segs[1..segs.len() - 1] {
                dwells
                    .entry(s.true_mode.unwrap().0)
                    .or_default()
                    .push(s.duration());
            }
        }
    }
    stats.finish(dwells)
}

pub fn run(args: &EvaluateArgs, cfg: &mut ExperimentConfig) -> CliResult<()> {
    if let Some(seed) = cli_seed(args.seed) {
        cfg.evaluation.seed = seed;
    }
    let rec_ckpt: RecoveryCheckpoint = read_json(&args.recovery)?;
    let recovery = NhaRecoveryModel::from_checkpoint(&rec_ckpt)?;
    let ev_ckpt: EventCheckpoint = read_json(&args.events)?;
    let events = EventModule::from_checkpoint(&ev_ckpt)?;
    let data = load_dataset(&args.dataset)?;
    if data.iter().any(|t| t.state_dim() != recovery.state_dim) {
        return Err(CliError::Config(format!(
            "dataset states do not match the model's dimension {}",
            recovery.state_dim
        )));
    }
    let labelled = data.iter().all(|t| t.mode_labels.is_some());
    let runs: Vec<Vec<Subtrajectory>> = if labelled {
        data.iter().map(label_runs).collect::<CliResult<_>>()?
    } else {
        data.iter()
            .map(|t| finite_difference_segment(t, f64::INFINITY))
            .collect::<Result<_, _>>()?
    };
    let flat: Vec<Subtrajectory> = runs.iter().flatten().cloned().collect();
    let reconstruction_mse = evaluate_mse(&recovery, &flat)?;

    let seed = cfg.evaluation.seed;
    let mut sim_stats = EventStats::default();
    let mut sim_dwells: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (i, traj) in data.iter().enumerate() {
        let horizon = args
            .horizon
            .unwrap_or_else(|| traj.times.last().unwrap() - traj.times[0]);
        let sim_cfg = NhaSimConfig {
            horizon,
            ..cfg.evaluation.sim
        };
        let z0 = traj.mode_labels.as_ref().map_or(0, |l| l[0].0);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let sim = simulate_nha(
            &recovery,
            &events,
            Some(&events),
            &traj.states[0],
            z0,
            &sim_cfg,
            &mut rng,
        )?;
        sim_stats.total_time += horizon;
        sim_stats.n_events += sim.events.len();
        for ev in &sim.events {
            *sim_stats
                .edge_counts
                .entry(edge_key((ev.source.0, ev.target.0)))
                .or_insert(0) += 1;
        }
        for (z, d) in dwell_times(&sim) {
            sim_dwells.entry(z).or_default().extend(d);
        }
    }
    let simulated = sim_stats.finish(sim_dwells);
    let data_stats = labelled.then(|| data_stats(&data, &runs));
    let dwell_relative_error = data_stats
        .as_ref()
        .map(|d| {
            d.dwell_means
                .iter()
                .filter_map(|(z, &obs)| {
                    simulated
                        .dwell_means
                        .get(z)
                        .map(|&s| (*z, (s - obs).abs() / obs))
                })
                .collect()
        })
        .unwrap_or_default();
    let evaluation = Evaluation {
        seed,
        n_trajectories: data.len(),
        data: data_stats,
        simulated,
        dwell_relative_error,
        reconstruction_mse,
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("evaluation.json"));
    write_json(&out, &evaluation)?;
    print_summary(&serde_json::json!({
        "simulated_events": evaluation.simulated.n_events,
        "reconstruction_mse": evaluation.reconstruction_mse,
        "evaluation": out.display().to_string(),
    }))
}

use std::path::PathBuf;

use clap::Args;
use nha_core::events::{evaluate_event_module_scaled, train_event_module, EventMetrics};
use nha_core::recovery::{collect_event_supervision, supervision_len, EventSupervision, Scaler};
use nha_core::Error as CoreError;
use serde::Serialize;

use super::{label_runs, load_dataset, output_path, print_summary, write_json};
use crate::config::{cli_seed, ExperimentConfig};
use crate::error::CliResult;

#[derive(Debug, Args)]
pub struct TrainEventsArgs {
    /// Dataset with per-sample modes, e.g. `labeled.jsonl` from `recover`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Supervise with the first N training trajectories only.
    #[arg(long = "n-supervision")]
    pub n_supervision: Option<usize>,
    /// Trajectories held out for scoring, taken from the end; defaults to a fifth.
    #[arg(long = "held-out")]
    pub held_out: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct EventReport {
    pub n_supervision: usize,
    pub n_held_out: usize,
    pub n_train_samples: usize,
    pub dropped: usize,
    pub final_flow_loss: Option<f64>,
    /// Scores on the supervision itself.
    pub train: EventMetrics,
    /// Scores on the held-out trajectories; absent when they contain no events.
    pub held_out: Option<EventMetrics>,
}

fn supervision(segs: &[Vec<nha_core::hybrid::Subtrajectory>]) -> EventSupervision {
    let flat: Vec<_> = segs.iter().flatten().cloned().collect();
    collect_event_supervision(&flat)
}

pub fn run(args: &TrainEventsArgs, cfg: &mut ExperimentConfig) -> CliResult<()> {
    if let Some(n) = args.n_supervision {
        cfg.n_supervision = Some(n);
    }
    if let Some(i) = args.iterations {
        cfg.events.iterations = i;
    }
    if let Some(seed) = cli_seed(args.seed) {
        cfg.events.seed = seed;
    }
    let data = load_dataset(&args.dataset)?;
    let segs = data.iter().map(label_runs).collect::<CliResult<Vec<_>>>()?;
    let n = data.len();
    let n_held = args
        .held_out
        .unwrap_or(if n >= 2 { (n / 5).max(1) } else { 0 })
        .min(n);
    let pool = n - n_held;
    let n_sup = cfg.n_supervision.unwrap_or(pool).min(pool);

    let train_sup = supervision(&segs[..n_sup]);
    if supervision_len(&train_sup) == 0 {
        return Err(CoreError::NoSupervision.into());
    }
    let (module, log) = train_event_module(&train_sup, &cfg.events)?;
    // one scaler per dataset, so jump errors compare across `n`
    let states: Vec<&Vec<f64>> = data.iter().flat_map(|t| &t.states).collect();
    let scaler = Scaler::fit(&states);
    let train = evaluate_event_module_scaled(&module, &train_sup, &scaler)?;
    let held_sup = supervision(&segs[pool..]);
    let held_out = match evaluate_event_module_scaled(&module, &held_sup, &scaler) {
        Ok(m) => Some(m),
        Err(CoreError::NoSupervision) => None,
        Err(e) => return Err(e.into()),
    };
    let report = EventReport {
        n_supervision: n_sup,
        n_held_out: n_held,
        n_train_samples: supervision_len(&train_sup),
        dropped: log.dropped,
        final_flow_loss: log.flow_losses.last().copied(),
        train,
        held_out,
    };
    let out_dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| cfg.output_dir.clone());
    let metrics_path = output_path(&out_dir, "event_metrics.json")?;
    write_json(&metrics_path, &report)?;
    write_json(&out_dir.join("events.ckpt.json"), &module.checkpoint())?;
    print_summary(&serde_json::json!({
        "n_supervision": n_sup,
        "n_train_samples": report.n_train_samples,
        "held_out_nll": report.held_out.as_ref().map(|m| m.pooled_nll),
        "held_out_jump_mse": report.held_out.as_ref().map(|m| m.pooled_jump_mse),
        "metrics": metrics_path.display().to_string(),
    }))
}

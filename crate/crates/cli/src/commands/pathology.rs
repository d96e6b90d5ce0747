use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use nha_core::systems::{pathology_report, GradientFlag, PathologyReport, ToyParams};
use serde::Serialize;

use super::{output_path, print_summary, write_json};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct PathologyArgs {
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    /// True event time, in (0, 1).
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub x0: f64,
    /// Estimated event times; defaults to 0.1, 0.2, ..., 0.9.
    #[arg(long = "tau-estimates", value_delimiter = ',')]
    pub tau_estimates: Vec<f64>,
    /// Sample times `(k + 1/2) / n` on `[0, 1]`.
    #[arg(long = "n-samples", default_value_t = 40)]
    pub n_samples: usize,
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct PathologyOutput {
    pub params: ToyParams,
    pub x0: f64,
    pub reports: Vec<PathologyReport>,
}

fn flag_name(f: Option<GradientFlag>) -> &'static str {
    match f {
        Some(GradientFlag::WronglyZero) => "wrongly-zero",
        Some(GradientFlag::WronglyNonzero) => "wrongly-nonzero",
        None => "",
    }
}

pub fn run(args: &PathologyArgs, cfg: &mut ExperimentConfig) -> CliResult<()> {
    let mut params = cfg.simulation.toy;
    params.a = args.a.unwrap_or(params.a);
    params.b = args.b.unwrap_or(params.b);
    params.c = args.c.unwrap_or(params.c);
    params.tau = args.tau.unwrap_or(params.tau);
    params.validate()?;
    if args.n_samples == 0 {
        return Err(CliError::Config("n-samples must be positive".into()));
    }
    let estimates: Vec<f64> = if args.tau_estimates.is_empty() {
        (1..=9).map(|k| k as f64 / 10.0).collect()
    } else {
        args.tau_estimates.clone()
    };
    let grid: Vec<f64> = (0..args.n_samples)
        .map(|k| (k as f64 + 0.5) / args.n_samples as f64)
        .collect();
    let mut reports = Vec::with_capacity(estimates.len());
    for &est in &estimates {
        // gradients are undefined exactly at either event time
        let times: Vec<f64> = grid
            .iter()
            .copied()
            .filter(|&t| t != est && t != params.tau)
            .collect();
        reports.push(pathology_report(&params, args.x0, est, &times)?);
    }
    let mut csv =
        String::from("tau_estimate,t,true_mode,estimated_mode,db_true,db_estimated,flag\n");
    for r in &reports {
        for s in &r.samples {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                r.tau_estimate,
                s.t,
                s.true_mode,
                s.estimated_mode,
                s.db_true,
                s.db_estimated,
                flag_name(s.flag)
            );
        }
    }
    let out_dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| cfg.output_dir.clone());
    let csv_path = output_path(&out_dir, "pathology.csv")?;
    std::fs::write(&csv_path, csv).map_err(|e| CliError::io(csv_path.display(), e))?;
    let output = PathologyOutput {
        params,
        x0: args.x0,
        reports,
    };
    write_json(&out_dir.join("pathology.json"), &output)?;
    print_summary(&serde_json::json!({
        "tau": params.tau,
        "estimates": output
            .reports
            .iter()
            .map(|r| serde_json::json!({
                "tau_estimate": r.tau_estimate,
                "wrongly_zero": r.wrongly_zero,
                "wrongly_nonzero": r.wrongly_nonzero,
            }))
            .collect::<Vec<_>>(),
        "csv": csv_path.display().to_string(),
    }))
}

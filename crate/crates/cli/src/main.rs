//! `nha`: simulate hybrid systems, recover modes from trajectories, train
//! event models and evaluate the learned automaton.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    evaluate::EvaluateArgs, pathology::PathologyArgs, recover::RecoverArgs, segment::SegmentArgs,
    simulate::SimulateArgs, train_events::TrainEventsArgs,
};
use config::{ExperimentConfig, Preset};
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "nha", version, about = "Neural hybrid automata toolkit")]
struct Cli {
    /// TOML file mirroring the experiment configuration; partial tables are fine.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Bundled defaults, applied before the config file.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a reference system and write a JSON Lines dataset.
    Simulate(SimulateArgs),
    /// Cut trajectories into segments and write a segment index.
    Segment(SegmentArgs),
    /// Recover modes by cross-validated training, or run a baseline.
    Recover(RecoverArgs),
    /// Fit interevent-time flows and jump maps on a labelled dataset.
    TrainEvents(TrainEventsArgs),
    /// Simulate the learned automaton and compare it with data.
    Evaluate(EvaluateArgs),
    /// Gradient classifications for the two-mode toy under wrong event times.
    Pathology(PathologyArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(cli.preset, cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => commands::simulate::run(&a, &mut cfg),
        Command::Segment(a) => commands::segment::run(&a, &mut cfg),
        Command::Recover(a) => commands::recover::run(&a, &mut cfg),
        Command::TrainEvents(a) => commands::train_events::run(&a, &mut cfg),
        Command::Evaluate(a) => commands::evaluate::run(&a, &mut cfg),
        Command::Pathology(a) => commands::pathology::run(&a, &mut cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

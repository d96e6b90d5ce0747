use std::path::{Path, PathBuf};

use nha_core::events::{EventHyper, NhaSimConfig};
use nha_core::nn::Activation;
use nha_core::recovery::{EncoderInput, LatentKind, LossKind, RecoveryHyper};
use nha_core::systems::{DatasetSpec, SystemKind};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    /// Finite-difference speed threshold; per-trajectory heuristic when unset.
    pub threshold: Option<f64>,
    pub corrupt_p: f64,
    pub seed: u64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            threshold: None,
            corrupt_p: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    /// Trajectories held out for the final test.
    pub test: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 5, test: 15 }
    }
}

/// Train on fixed-length windows instead of whole segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub len: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct EvaluationConfig {
    pub sim: NhaSimConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    pub simulation: DatasetSpec,
    pub segmentation: SegmentationConfig,
    pub recovery: RecoveryHyper,
    pub cv: CvConfig,
    pub windows: Option<WindowConfig>,
    pub events: EventHyper,
    pub n_supervision: Option<usize>,
    pub evaluation: EvaluationConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemKind::TcpReno,
            simulation: DatasetSpec::default(),
            segmentation: SegmentationConfig::default(),
            recovery: RecoveryHyper::default(),
            cv: CvConfig::default(),
            windows: None,
            events: EventHyper::default(),
            n_supervision: None,
            evaluation: EvaluationConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    TcpPaper,
    SlsAblation,
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let mut c = Self::default();
        match p {
            Preset::TcpPaper => {
                c.system = SystemKind::TcpReno;
                c.simulation.n_trajectories = 40;
                c.simulation.horizon = 200.0;
                // only repeated timestamps (jumps) cut
                c.segmentation.threshold = Some(1e9);
                c.recovery.m = 10;
                c.recovery.max_steps = Some(40);
            }
            Preset::SlsAblation => {
                c.system = SystemKind::Sls;
                c.simulation.n_trajectories = 20;
                c.simulation.horizon = 10.0;
                c.segmentation.threshold = Some(1e9);
                c.recovery = RecoveryHyper {
                    m: 4,
                    latent_kind: LatentKind::Categorical,
                    encoder_input: EncoderInput::State,
                    encoder_hidden: vec![64, 64],
                    encoder_activation: Activation::Silu,
                    encoder_dropout: 0.0,
                    field_hidden: vec![32, 32],
                    field_activations: vec![Activation::Softplus, Activation::Tanh],
                    iterations: 2000,
                    lr_encoder: 5e-3,
                    lr_decoder: 1e-3,
                    batch_size: 32,
                    loss: LossKind::L1,
                    fd_weight: 1.0,
                    ..RecoveryHyper::default()
                };
                c.windows = Some(WindowConfig { len: 8, stride: 4 });
                c.cv = CvConfig { folds: 1, test: 0 };
            }
        }
        c
    }

    /// Defaults, then the preset, then the TOML file (partial tables are
    /// merged key by key), then `HAL_SEED`.
    pub fn load(preset: Option<Preset>, file: Option<&Path>) -> Result<Self, CliError> {
        let base = preset.map_or_else(Self::default, Self::preset);
        let mut value = serde_json::to_value(&base).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let parsed: toml::Value = toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let overlay =
                serde_json::to_value(parsed).map_err(|e| CliError::Config(e.to_string()))?;
            merge(&mut value, overlay);
        }
        let mut cfg: Self = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("invalid configuration: {e}")))?;
        if let Ok(seed) = std::env::var("HAL_SEED") {
            let seed: u64 = seed.trim().parse().map_err(|_| {
                CliError::Config(format!(
                    "HAL_SEED must be an unsigned integer, got {seed:?}"
                ))
            })?;
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.simulation.seed = seed;
        self.segmentation.seed = seed;
        self.recovery.seed = seed;
        self.events.seed = seed;
        self.evaluation.seed = seed;
    }
}

/// Seed given on the command line, unless `HAL_SEED` takes precedence.
pub fn cli_seed(flag: Option<u64>) -> Option<u64> {
    if std::env::var_os("HAL_SEED").is_some() {
        None
    } else {
        flag
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

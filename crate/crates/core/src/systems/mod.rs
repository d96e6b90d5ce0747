//! Reference systems and synthetic dataset generation.

mod diff_drive;
mod sls;
mod tcp;
mod toy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub use diff_drive::make_diff_drive;
pub use sls::{make_sls, sls_field, sls_region};
pub use tcp::{
    make_tcp_reno, TcpParams, CONGESTION_AVOIDANCE, SLOW_START, TCP_INITIAL_STATE, TIMEOUT,
};
pub use toy::{
    make_toy, pathology_report, toy_gradients, toy_solution, GradientFlag, PathologyReport,
    PathologySample, ToyGradients, ToyParams,
};

use crate::hybrid::{HybridSystemDef, ModeId};
use crate::solvers::{odeint_hybrid, HybridSolution, SolverConfig};
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    TcpReno,
    Sls,
    Toy,
    DiffDrive,
}

impl SystemKind {
    pub const ALL: [SystemKind; 4] = [Self::TcpReno, Self::Sls, Self::Toy, Self::DiffDrive];

    pub fn name(self) -> &'static str {
        match self {
            Self::TcpReno => "tcp-reno",
            Self::Sls => "sls",
            Self::Toy => "toy",
            Self::DiffDrive => "diff-drive",
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown system '{s}'")))
    }
}

/// Parameters shared by every generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub n_trajectories: usize,
    pub horizon: f64,
    pub seed: u64,
    pub tcp: TcpParams,
    pub toy: ToyParams,
    pub solver: SolverConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_trajectories: 40,
            horizon: 100.0,
            seed: 0,
            tcp: TcpParams::default(),
            toy: ToyParams::default(),
            solver: SolverConfig {
                output_dt: Some(0.05),
                ..SolverConfig::default()
            },
        }
    }
}

/// The differential drive as a one-mode hybrid system with a constant
/// forward speed of one and turn rate `u_r`.
fn diff_drive_system(u_r: f64) -> HybridSystemDef {
    HybridSystemDef {
        name: "diff-drive".into(),
        n_modes: 1,
        state_dim: 3,
        flows: vec![make_diff_drive(move |_t, _x| (1.0, u_r))],
        events: Vec::new(),
        initial_mode: ModeId(0),
    }
}

/// Simulates `spec.n_trajectories` runs of `kind`. Trajectory `i` uses the
/// seed `derive_seed(spec.seed, i)` for both its initial condition and its
/// stochastic events, so a dataset is reproducible run by run.
///
/// Initial conditions: TCP starts at `(w, r) = (1, 0)` in slow start; SLS
/// draws `(x, y)` uniformly from `[-1, 3] x [-2, 2]`; the toy starts
/// uniformly in `[0.5, 1.5]`; the drive starts at a random pose with a random turn rate.
pub fn simulate_dataset(kind: SystemKind, spec: &DatasetSpec) -> Result<Vec<HybridSolution>> {
    if !(spec.horizon > 0.0) {
        return Err(Error::InvalidConfig("horizon must be positive".into()));
    }
    let shared = match kind {
        SystemKind::TcpReno => Some(make_tcp_reno(spec.tcp)?),
        SystemKind::Sls => Some(make_sls()),
        SystemKind::Toy => Some(make_toy(spec.toy)?),
        SystemKind::DiffDrive => None,
    };
    (0..spec.n_trajectories)
        .map(|i| {
            let seed = derive_seed(spec.seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let owned;
            let (system, x0): (&HybridSystemDef, Vec<f64>) = match kind {
                SystemKind::TcpReno => (shared.as_ref().unwrap(), TCP_INITIAL_STATE.to_vec()),
                SystemKind::Sls => (
                    shared.as_ref().unwrap(),
                    vec![rng.random_range(-1.0..3.0), rng.random_range(-2.0..2.0)],
                ),
                SystemKind::Toy => (shared.as_ref().unwrap(), vec![rng.random_range(0.5..1.5)]),
                SystemKind::DiffDrive => {
                    owned = diff_drive_system(rng.random_range(-1.0..1.0));
                    let pose = vec![
                        rng.random_range(-5.0..5.0),
                        rng.random_range(-5.0..5.0),
                        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                    ];
                    (&owned, pose)
                }
            };
            let z0 = match kind {
                SystemKind::Sls => sls_region(&x0),
                _ => system.initial_mode,
            };
            let mut sol = odeint_hybrid(system, &x0, z0, (0.0, spec.horizon), &spec.solver, seed)?;
            sol.trajectory.id = format!("{}-{i:04}", kind.name());
            Ok(sol)
        })
        .collect()
}

/// Builds the named system with default parameters.
pub fn make_system(kind: SystemKind, tcp: TcpParams, toy: ToyParams) -> Result<HybridSystemDef> {
    match kind {
        SystemKind::TcpReno => make_tcp_reno(tcp),
        SystemKind::Sls => Ok(make_sls()),
        SystemKind::Toy => make_toy(toy),
        SystemKind::DiffDrive => Ok(diff_drive_system(0.0)),
    }
}

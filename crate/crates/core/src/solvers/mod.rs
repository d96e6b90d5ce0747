//! ODE integration: fixed-step RK4, adaptive Dormand–Prince, and the hybrid
//! event loop that stops at deterministic crossings and stochastic events.

mod event;
mod hybrid;
mod rk;

use serde::{Deserialize, Serialize};

use crate::hybrid::Trajectory;
use crate::{Error, Result};

pub use event::{locate_event, EventLocation};
pub use hybrid::{odeint_hybrid, HybridEvent, HybridSolution, ModeInterval, StepStats};
pub use rk::{error_ratio, initial_step_size, step_dopri, step_dopri_fsal, step_rk4, DopriStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rk4,
    DormandPrince,
}

impl Method {
    pub fn order(self) -> i32 {
        match self {
            Method::Rk4 => 4,
            Method::DormandPrince => 5,
        }
    }
}

/// Integrator settings. Defaults follow the TCP simulation table: absolute,
/// relative and event tolerances of 1e-6, 1e-6 and 1e-4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub method: Method,
    pub atol: f64,
    pub rtol: f64,
    pub event_tol: f64,
    pub max_root_iters: usize,
    /// Initial step for adaptive runs; the fixed step for RK4.
    pub dt_init: Option<f64>,
    pub safety: f64,
    pub min_factor: f64,
    pub max_factor: f64,
    pub max_step: Option<f64>,
    /// When set, only states on the grid `t0 + k * output_dt` (plus jump
    /// pairs and the final time) are recorded. Steps never straddle a grid
    /// point, so no interpolation is involved.
    pub output_dt: Option<f64>,
    pub max_events_per_unit_time: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::DormandPrince,
            atol: 1e-6,
            rtol: 1e-6,
            event_tol: 1e-4,
            max_root_iters: 100,
            dt_init: None,
            safety: 0.9,
            min_factor: 0.2,
            max_factor: 10.0,
            max_step: None,
            output_dt: None,
            max_events_per_unit_time: 1e4,
        }
    }
}

impl SolverConfig {
    pub fn rk4(dt: f64) -> Self {
        Self {
            method: Method::Rk4,
            dt_init: Some(dt),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("atol", self.atol)?;
        positive("rtol", self.rtol)?;
        positive("event_tol", self.event_tol)?;
        positive("safety", self.safety)?;
        positive("max_events_per_unit_time", self.max_events_per_unit_time)?;
        if !(self.min_factor > 0.0 && self.min_factor < 1.0 && self.max_factor > 1.0) {
            return Err(Error::InvalidConfig(
                "step factors must satisfy 0 < min_factor < 1 < max_factor".into(),
            ));
        }
        if self.max_root_iters == 0 {
            return Err(Error::InvalidConfig(
                "max_root_iters must be positive".into(),
            ));
        }
        for (name, v) in [
            ("dt_init", self.dt_init),
            ("max_step", self.max_step),
            ("output_dt", self.output_dt),
        ] {
            if let Some(v) = v {
                positive(name, v)?;
            }
        }
        if self.method == Method::Rk4 && self.dt_init.is_none() && self.output_dt.is_none() {
            return Err(Error::InvalidConfig(
                "RK4 needs dt_init or output_dt".into(),
            ));
        }
        Ok(())
    }

    /// Step-size update from an error ratio.
    pub fn adapt_step(&self, dt: f64, ratio: f64) -> f64 {
        let factor = if ratio == 0.0 {
            self.max_factor
        } else {
            (self.safety * ratio.powf(-1.0 / Method::DormandPrince.order() as f64))
                .clamp(self.min_factor, self.max_factor)
        };
        dt * factor
    }
}

/// Integrates `flow` over `t_span`.
///
/// Dormand–Prince runs record every accepted step (or the `output_dt` grid);
/// RK4 runs use the fixed step `dt_init` (or `output_dt`).
pub fn odeint<F>(
    flow: &F,
    x0: &[f64],
    t_span: (f64, f64),
    config: &SolverConfig,
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let wrapped = |_m: crate::hybrid::ModeId, t: f64, x: &[f64], dx: &mut [f64]| flow(t, x, dx);
    let sol = hybrid::integrate(
        &wrapped,
        &[],
        x0,
        crate::hybrid::ModeId(0),
        t_span,
        config,
        0,
    )?;
    let mut traj = sol.trajectory;
    traj.mode_labels = None;
    traj.event_times = None;
    Ok(traj)
}

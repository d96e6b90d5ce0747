//! A three-mode TCP-Reno-style congestion controller.
//!
//! State is `(w, r)`: congestion window and cumulative throughput. Modes are
//! slow start, congestion avoidance and timeout. Window growth is exponential
//! in slow start, linear in congestion avoidance and frozen in timeout; all
//! five transitions are stochastic.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::hybrid::{EventSpec, FlowFn, HybridSystemDef, ModeId};
use crate::{Error, Result};

pub const SLOW_START: ModeId = ModeId(0);
pub const CONGESTION_AVOIDANCE: ModeId = ModeId(1);
pub const TIMEOUT: ModeId = ModeId(2);

/// `(w, r)` at the start of every simulated connection.
pub const TCP_INITIAL_STATE: [f64; 2] = [1.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TcpParams {
    pub tau_off: f64,
    pub eta: f64,
    pub n_ack: f64,
    pub p_drop: f64,
    pub kappa: f64,
}

impl Default for TcpParams {
    fn default() -> Self {
        Self {
            tau_off: 3.0,
            eta: 1.0,
            n_ack: 2.0,
            p_drop: 0.05,
            kappa: 4.0,
        }
    }
}

impl TcpParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau_off > 0.0
            && self.eta > 0.0
            && self.n_ack > 0.0
            && self.kappa > 0.0
            && self.p_drop > 0.0
            && self.p_drop < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid TCP parameters {self:?}"
            )))
        }
    }

    /// Packet-drop intensity (slow start -> avoidance, avoidance self-loop).
    pub fn drop_rate(&self, w: f64) -> f64 {
        self.p_drop * self.kappa * w
    }

    /// Timeout intensity out of slow start and avoidance.
    pub fn timeout_rate(&self, w: f64) -> f64 {
        0.25 * self.p_drop * self.kappa * w
    }
}

/// Builds the TCP system. Edges, in order: ss->ca, ss->off, ca->ca,
/// ca->off, off->ss.
pub fn make_tcp_reno(params: TcpParams) -> Result<HybridSystemDef> {
    params.validate()?;
    let p = params;
    let slow_start: FlowFn = std::sync::Arc::new(move |_t, x: &[f64], dx: &mut [f64]| {
        dx[0] = p.eta * x[0] * LN_2;
        dx[1] = p.kappa * x[0];
    });
    let avoidance: FlowFn = std::sync::Arc::new(move |_t, x: &[f64], dx: &mut [f64]| {
        dx[0] = p.eta / p.n_ack;
        dx[1] = p.kappa * x[0];
    });
    let timeout: FlowFn = std::sync::Arc::new(|_t, _x: &[f64], dx: &mut [f64]| {
        dx[0] = 0.0;
        dx[1] = 0.0;
    });
    let halve = |_t: f64, x: &[f64]| vec![0.5 * x[0], x[1]];
    let reset = |_t: f64, x: &[f64]| vec![1.0, x[1]];
    let (ss, ca, off) = (SLOW_START.0, CONGESTION_AVOIDANCE.0, TIMEOUT.0);
    let events = vec![
        EventSpec::stochastic(ss, ca, move |_t, x| p.drop_rate(x[0]), halve),
        EventSpec::stochastic(ss, off, move |_t, x| p.timeout_rate(x[0]), reset),
        EventSpec::stochastic(ca, ca, move |_t, x| p.drop_rate(x[0]), halve),
        EventSpec::stochastic(ca, off, move |_t, x| p.timeout_rate(x[0]), reset),
        EventSpec::stochastic(off, ss, move |_t, _x| 1.0 / p.tau_off, reset),
    ];
    Ok(HybridSystemDef {
        name: "tcp-reno".into(),
        n_modes: 3,
        state_dim: 2,
        flows: vec![slow_start, avoidance, timeout],
        events,
        initial_mode: SLOW_START,
    })
}

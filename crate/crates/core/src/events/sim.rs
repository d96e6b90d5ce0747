use std::collections::BTreeMap;
use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::flow::{Edge, SplineFlow};
use super::train::EventModule;
use crate::hybrid::{ModeId, Trajectory};
use crate::recovery::{decode_flow, NhaRecoveryModel};
use crate::solvers::{step_rk4, HybridEvent};
use crate::{Error, Result};

/// Anything that can propose interevent times for the edges leaving a mode.
pub trait EventTimeModel {
    /// Targets of the edges leaving `z`, in increasing order.
    fn targets(&self, z: usize) -> Vec<usize>;
    fn sample_interevent<R: Rng + ?Sized>(
        &self,
        edge: Edge,
        t: f64,
        x: &[f64],
        rng: &mut R,
    ) -> Result<f64>;
}

fn sorted_targets(edges: &[Edge], z: usize) -> Vec<usize> {
    let mut out: Vec<usize> = edges.iter().filter(|e| e.0 == z).map(|e| e.1).collect();
    out.sort_unstable();
    out.dedup();
    out
}

impl EventTimeModel for SplineFlow {
    fn targets(&self, z: usize) -> Vec<usize> {
        sorted_targets(&self.edges, z)
    }

    fn sample_interevent<R: Rng + ?Sized>(
        &self,
        edge: Edge,
        t: f64,
        x: &[f64],
        rng: &mut R,
    ) -> Result<f64> {
        self.sample(edge, t, x, rng)
    }
}

impl EventTimeModel for EventModule {
    fn targets(&self, z: usize) -> Vec<usize> {
        self.flow.targets(z)
    }

    fn sample_interevent<R: Rng + ?Sized>(
        &self,
        edge: Edge,
        t: f64,
        x: &[f64],
        rng: &mut R,
    ) -> Result<f64> {
        self.flow.sample(edge, t, x, rng)
    }
}

/// Exponential interevent times with fixed rates per edge.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExponentialTimes {
    pub rates: BTreeMap<Edge, f64>,
}

impl EventTimeModel for ExponentialTimes {
    fn targets(&self, z: usize) -> Vec<usize> {
        sorted_targets(&self.rates.keys().copied().collect::<Vec<_>>(), z)
    }

    fn sample_interevent<R: Rng + ?Sized>(
        &self,
        edge: Edge,
        _t: f64,
        _x: &[f64],
        rng: &mut R,
    ) -> Result<f64> {
        let rate = self.rates.get(&edge).copied().unwrap_or(0.0);
        if !(rate > 0.0) {
            return Ok(f64::INFINITY);
        }
        let e: f64 = rng.sample(rand_distr::Exp1);
        Ok(e / rate)
    }
}

/// Draws one candidate time per outgoing edge and returns the earliest
/// `(t_k + tau, z')`; ties go to the smaller target.
pub fn sample_next_event<M, R>(
    model: &M,
    z: usize,
    t_k: f64,
    x: &[f64],
    rng: &mut R,
) -> Result<(f64, usize)>
where
    M: EventTimeModel + ?Sized,
    R: Rng + ?Sized,
{
    let targets = model.targets(z);
    if targets.is_empty() {
        return Err(Error::NoOutgoingEdges(z));
    }
    let mut best = (f64::INFINITY, targets[0]);
    for target in targets {
        let tau = model.sample_interevent((z, target), t_k, x, rng)?;
        if tau < best.0 {
            best = (tau, target);
        }
    }
    Ok((t_k + best.0, best.1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NhaSimConfig {
    pub horizon: f64,
    /// Output grid spacing and RK4 step.
    pub dt: f64,
    pub max_events_per_unit_time: f64,
}

impl Default for NhaSimConfig {
    fn default() -> Self {
        Self {
            horizon: 100.0,
            dt: 0.05,
            max_events_per_unit_time: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NhaSimulation {
    /// Samples on the output grid plus a repeated timestamp at every event
    /// (pre-jump then post-jump state), with the active mode per sample.
    pub trajectory: Trajectory,
    pub events: Vec<HybridEvent>,
}

/// Generates a trajectory from a trained automaton: integrate the decoder
/// field of the current mode until the quickest sampled event, apply the
/// edge's jump map, switch mode and repeat up to the horizon. Modes without
/// outgoing edges are absorbing.
pub fn simulate_nha<M, R>(
    recovery: &NhaRecoveryModel,
    events: &M,
    jumps: Option<&EventModule>,
    x0: &[f64],
    z0: usize,
    config: &NhaSimConfig,
    rng: &mut R,
) -> Result<NhaSimulation>
where
    M: EventTimeModel + ?Sized,
    R: Rng + ?Sized,
{
    if !(config.horizon > 0.0 && config.dt > 0.0) {
        return Err(Error::InvalidConfig(
            "horizon and dt must be positive".into(),
        ));
    }
    let n_fields = if recovery.encoder.is_some() {
        recovery.fields.len()
    } else {
        0
    };
    if n_fields > 0 && z0 >= n_fields {
        return Err(Error::InvalidConfig(format!(
            "mode {z0} outside the model's {n_fields} fields"
        )));
    }
    let one_hot = |z: usize| {
        let mut v = vec![0.0; n_fields];
        if z < n_fields {
            v[z] = 1.0;
        }
        v
    };
    let mut traj = Trajectory::new("nha", vec![0.0], vec![x0.to_vec()]);
    let mut labels = vec![ModeId(z0)];
    let mut event_times = Vec::new();
    let mut out_events = Vec::new();
    let mut recent: VecDeque<f64> = VecDeque::new();
    let (mut t, mut x, mut z) = (0.0, x0.to_vec(), z0);
    let mut grid_k: u64 = 1;
    loop {
        let (t_next, z_next) = match sample_next_event(events, z, t, &x, rng) {
            Ok(v) => v,
            Err(Error::NoOutgoingEdges(_)) => (f64::INFINITY, z),
            Err(e) => return Err(e),
        };
        let t_end = t_next.min(config.horizon);
        let zv = one_hot(z);
        let err = std::cell::RefCell::new(None);
        let flow = |_t: f64, u: &[f64], du: &mut [f64]| match decode_flow(recovery, &zv, 0.0, u) {
            Ok(f) => du.copy_from_slice(&f),
            Err(e) => {
                du.iter_mut().for_each(|v| *v = f64::NAN);
                err.replace(Some(e));
            }
        };
        loop {
            let grid = grid_k as f64 * config.dt;
            let target = if grid < t_end { grid } else { t_end };
            if target > t {
                x = step_rk4(&flow, t, &x, target - t)?;
                if let Some(e) = err.take() {
                    return Err(e);
                }
                t = target;
                traj.times.push(t);
                traj.states.push(x.clone());
                labels.push(ModeId(z));
            }
            if grid < t_end {
                grid_k += 1;
            } else {
                if grid == t_end {
                    grid_k += 1;
                }
                break;
            }
        }
        if t_next >= config.horizon {
            break;
        }
        recent.push_back(t_next);
        while recent.front().is_some_and(|&s| s < t_next - 1.0) {
            recent.pop_front();
        }
        if recent.len() as f64 > config.max_events_per_unit_time {
            return Err(Error::ZenoGuard {
                t: t_next,
                limit: config.max_events_per_unit_time,
            });
        }
        let edge = (z, z_next);
        x = match jumps {
            Some(j) => j.jump(edge, &x)?,
            None => x,
        };
        out_events.push(HybridEvent {
            time: t_next,
            source: ModeId(z),
            target: ModeId(z_next),
            spec_index: out_events.len(),
        });
        event_times.push(t_next);
        z = z_next;
        traj.times.push(t);
        traj.states.push(x.clone());
        labels.push(ModeId(z));
    }
    traj.mode_labels = Some(labels);
    traj.event_times = Some(event_times);
    Ok(NhaSimulation {
        trajectory: traj,
        events: out_events,
    })
}

/// Dwell times between consecutive events of a simulation, grouped by the
/// mode that was active.
pub fn dwell_times(sim: &NhaSimulation) -> BTreeMap<usize, Vec<f64>> {
    let mut out: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for w in sim.events.windows(2) {
        out.entry(w[1].source.0)
            .or_default()
            .push(w[1].time - w[0].time);
    }
    out
}

//! Domain types shared by the simulator and the learning pipeline.
//!
//! A [`Trajectory`] stores a sampled hybrid trajectory. Jump instants are
//! encoded by repeating the timestamp: the first copy holds the state right
//! before the jump and the second copy the state right after it.

mod dataset;
mod segment;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use dataset::{read_dataset, read_dataset_str, write_dataset, DatasetRecord};
pub(crate) use segment::group_by_parent;
pub use segment::{
    concat_segments, corrupt_segmentation, default_threshold, finite_difference_segment,
    segment_bounds, segments_from_bounds,
};

/// Identifier of a discrete mode, `0 <= index < m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeId(pub usize);

impl ModeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A continuous state. Plain vectors keep the numerics allocation-light.
pub type StateVec = Vec<f64>;

/// Time-stamped state samples of one hybrid trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub id: String,
    pub times: Vec<f64>,
    pub states: Vec<StateVec>,
    /// Per-sample mode labels: ground truth from a simulator or a model's
    /// prediction, never both.
    pub mode_labels: Option<Vec<ModeId>>,
    pub event_times: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, times: Vec<f64>, states: Vec<StateVec>) -> Self {
        Self {
            id: id.into(),
            times,
            states,
            mode_labels: None,
            event_times: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn last_state(&self) -> Option<&StateVec> {
        self.states.last()
    }

    /// Indices `i` where `times[i] == times[i + 1]`, i.e. recorded jumps.
    pub fn jump_indices(&self) -> Vec<usize> {
        self.times
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0] == w[1])
            .map(|(i, _)| i)
            .collect()
    }
}

/// A contiguous slice `[start_idx, end_idx)` of a parent trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Subtrajectory {
    pub parent_id: String,
    pub start_idx: usize,
    pub end_idx: usize,
    pub times: Vec<f64>,
    pub states: Vec<StateVec>,
    pub recovered_mode: Option<ModeId>,
    /// Majority ground-truth label of the covered samples, when the parent
    /// carried labels. Kept separate from `recovered_mode`.
    pub true_mode: Option<ModeId>,
}

impl Subtrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }
}

pub type FlowFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type JumpFn = Arc<dyn Fn(f64, &[f64]) -> StateVec + Send + Sync>;

/// How an edge fires.
#[derive(Clone)]
pub enum EventKind {
    /// Fires when `condition(t, x)` moves from negative to non-negative.
    Deterministic(ScalarFn),
    /// Fires when the integrated intensity reaches an Exponential(1) budget.
    Stochastic(ScalarFn),
}

impl EventKind {
    pub fn is_stochastic(&self) -> bool {
        matches!(self, EventKind::Stochastic(_))
    }
}

/// One edge `source -> target` of the automaton.
#[derive(Clone)]
pub struct EventSpec {
    pub source: ModeId,
    pub target: ModeId,
    pub kind: EventKind,
    pub jump: JumpFn,
}

impl EventSpec {
    pub fn deterministic(
        source: usize,
        target: usize,
        condition: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        jump: impl Fn(f64, &[f64]) -> StateVec + Send + Sync + 'static,
    ) -> Self {
        Self {
            source: ModeId(source),
            target: ModeId(target),
            kind: EventKind::Deterministic(Arc::new(condition)),
            jump: Arc::new(jump),
        }
    }

    pub fn stochastic(
        source: usize,
        target: usize,
        intensity: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        jump: impl Fn(f64, &[f64]) -> StateVec + Send + Sync + 'static,
    ) -> Self {
        Self {
            source: ModeId(source),
            target: ModeId(target),
            kind: EventKind::Stochastic(Arc::new(intensity)),
            jump: Arc::new(jump),
        }
    }
}

impl fmt::Debug for EventSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EventSpec")
            .field("source", &self.source)
            .field("target", &self.target)
            .field("stochastic", &self.kind.is_stochastic())
            .finish()
    }
}

/// A simulatable stochastic hybrid system.
#[derive(Clone)]
pub struct HybridSystemDef {
    pub name: String,
    pub n_modes: usize,
    pub state_dim: usize,
    pub flows: Vec<FlowFn>,
    pub events: Vec<EventSpec>,
    pub initial_mode: ModeId,
}

impl HybridSystemDef {
    /// Checks that every edge and flow refers to a declared mode.
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        if self.n_modes == 0 {
            return Err(Error::InvalidConfig("system has no modes".into()));
        }
        if self.flows.len() != self.n_modes {
            return Err(Error::InvalidConfig(format!(
                "{} flows for {} modes",
                self.flows.len(),
                self.n_modes
            )));
        }
        if self.initial_mode.0 >= self.n_modes {
            return Err(Error::InvalidConfig("initial mode out of range".into()));
        }
        for (i, ev) in self.events.iter().enumerate() {
            if ev.source.0 >= self.n_modes || ev.target.0 >= self.n_modes {
                return Err(Error::InvalidConfig(format!(
                    "event {i} references a mode outside 0..{}",
                    self.n_modes
                )));
            }
        }
        Ok(())
    }

    /// Indices of the edges leaving `mode`, in declaration order.
    pub fn outgoing(&self, mode: ModeId) -> Vec<usize> {
        self.events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.source == mode)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn flow(&self, mode: ModeId) -> &FlowFn {
        &self.flows[mode.0]
    }
}

impl fmt::Debug for HybridSystemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HybridSystemDef")
            .field("name", &self.name)
            .field("n_modes", &self.n_modes)
            .field("state_dim", &self.state_dim)
            .field("events", &self.events)
            .field("initial_mode", &self.initial_mode)
            .finish()
    }
}

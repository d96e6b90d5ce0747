use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::hybrid::{group_by_parent, StateVec, Subtrajectory};

/// One observed transition `z -> z'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSample {
    /// Time spent in `z`: duration of the earlier segment.
    pub tau: f64,
    pub x_pre: StateVec,
    pub x_post: StateVec,
    /// Start time and state of the earlier segment.
    pub t_start: f64,
    pub x_start: StateVec,
}

pub type EventSupervision = BTreeMap<(usize, usize), Vec<EventSample>>;

/// Interevent times and jump pairs for every adjacent pair of labelled
/// segments within a parent trajectory. Pairs involving an unlabelled
/// segment are skipped.
pub fn collect_event_supervision(segments: &[Subtrajectory]) -> EventSupervision {
    let mut out = EventSupervision::new();
    for group in group_by_parent(segments) {
        for pair in group.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (Some(z), Some(z_next)) = (a.recovered_mode, b.recovered_mode) else {
                continue;
            };
            if a.is_empty() || b.is_empty() {
                continue;
            }
            out.entry((z.0, z_next.0)).or_default().push(EventSample {
                tau: a.duration(),
                x_pre: a.states[a.len() - 1].clone(),
                x_post: b.states[0].clone(),
                t_start: a.times[0],
                x_start: a.states[0].clone(),
            });
        }
    }
    out
}

/// Total number of samples across all keys.
pub fn supervision_len(sup: &EventSupervision) -> usize {
    sup.values().map(Vec::len).sum()
}

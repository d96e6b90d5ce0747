use serde::{Deserialize, Serialize};

use super::model::NhaRecoveryModel;
use super::train::predict_labels;
use crate::hybrid::Subtrajectory;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeLog {
    /// Mean L1 field distance for every pair of used labels.
    pub distances: Vec<(usize, usize, f64)>,
    /// `(kept, absorbed)` label pairs, in merge order.
    pub merges: Vec<(usize, usize)>,
    pub modes_before: usize,
    pub modes_after: usize,
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut j = i;
    while parent[j] != r {
        let next = parent[j];
        parent[j] = r;
        j = next;
    }
    r
}

/// Mean over `states` of `|f_i(x) - f_j(x)|_1`.
pub fn field_distance(
    model: &NhaRecoveryModel,
    i: usize,
    j: usize,
    states: &[&[f64]],
) -> Result<f64> {
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for x in states {
        let a = model.field_at(i, x)?;
        let b = model.field_at(j, x)?;
        total += a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum::<f64>();
    }
    Ok(total / states.len() as f64)
}

/// Merges used labels whose fields lie closer than `threshold` (strictly)
/// in mean L1 distance over the data states. Merging is transitive and
/// every group is relabelled to its smallest label.
pub fn prune_modes(
    model: &NhaRecoveryModel,
    segments: &[Subtrajectory],
    threshold: f64,
) -> Result<(NhaRecoveryModel, MergeLog)> {
    let mut used = predict_labels(model, segments)?;
    used.sort_unstable();
    used.dedup();
    let states: Vec<&[f64]> = segments
        .iter()
        .flat_map(|s| s.states.iter().map(Vec::as_slice))
        .collect();
    let mut distances = Vec::new();
    let n_labels = model
        .label_map
        .iter()
        .max()
        .map_or(0, |m| m + 1)
        .max(model.fields.len());
    let mut parent: Vec<usize> = (0..n_labels).collect();
    let mut merges = Vec::new();
    for (a, &i) in used.iter().enumerate() {
        for &j in &used[a + 1..] {
            if model.encoder.is_none() {
                continue;
            }
            let d = field_distance(model, i, j, &states)?;
            distances.push((i, j, d));
            if d < threshold {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    let (keep, absorb) = (ri.min(rj), ri.max(rj));
                    parent[absorb] = keep;
                    merges.push((keep, absorb));
                }
            }
        }
    }
    let mut out = model.clone();
    for l in out.label_map.iter_mut() {
        *l = find(&mut parent, *l);
    }
    let mut after: Vec<usize> = used.iter().map(|&l| find(&mut parent, l)).collect();
    after.dedup();
    after.sort_unstable();
    after.dedup();
    let log = MergeLog {
        distances,
        merges,
        modes_before: used.len(),
        modes_after: after.len(),
    };
    Ok((out, log))
}

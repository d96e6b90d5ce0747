use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModeId, Subtrajectory, Trajectory};
use crate::{Error, Result};

fn euclid_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (y - x) * (y - x))
        .sum::<f64>()
        .sqrt()
}

fn check_times(traj: &Trajectory) -> Result<()> {
    if traj.len() < 2 {
        return Err(Error::EmptyTrajectory(traj.len()));
    }
    if traj.states.len() != traj.times.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} timestamps but {} states",
            traj.times.len(),
            traj.states.len()
        )));
    }
    for (i, w) in traj.times.windows(2).enumerate() {
        if !(w[1] >= w[0]) {
            return Err(Error::NonMonotoneTime { index: i + 1 });
        }
    }
    Ok(())
}

/// Heuristic threshold: five times the median finite-difference norm over
/// strictly increasing timestamp pairs. Zero differences are ignored so that
/// frozen stretches do not drag the scale to zero.
pub fn default_threshold(traj: &Trajectory) -> Result<f64> {
    check_times(traj)?;
    let mut norms: Vec<f64> = traj
        .times
        .windows(2)
        .zip(traj.states.windows(2))
        .filter(|(t, _)| t[1] > t[0])
        .map(|(t, x)| euclid_diff(&x[0], &x[1]) / (t[1] - t[0]))
        .filter(|v| *v > 0.0)
        .collect();
    if norms.is_empty() {
        return Ok(1.0);
    }
    norms.sort_by(f64::total_cmp);
    let mid = norms.len() / 2;
    let median = if norms.len().is_multiple_of(2) {
        0.5 * (norms[mid - 1] + norms[mid])
    } else {
        norms[mid]
    };
    Ok(5.0 * median)
}

/// Splits a trajectory wherever the finite-difference speed exceeds
/// `threshold` (Euclidean norm). Duplicated timestamps are always cut.
pub fn finite_difference_segment(traj: &Trajectory, threshold: f64) -> Result<Vec<Subtrajectory>> {
    check_times(traj)?;
    if !(threshold > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "segmentation threshold must be positive, got {threshold}"
        )));
    }
    let mut starts = vec![0];
    for i in 0..traj.len() - 1 {
        let dt = traj.times[i + 1] - traj.times[i];
        let cut = dt == 0.0 || euclid_diff(&traj.states[i], &traj.states[i + 1]) / dt > threshold;
        if cut {
            starts.push(i + 1);
        }
    }
    Ok(segments_from_bounds(
        traj,
        &starts_to_bounds(&starts, traj.len()),
    ))
}

fn starts_to_bounds(starts: &[usize], len: usize) -> Vec<(usize, usize)> {
    starts
        .iter()
        .enumerate()
        .map(|(k, &s)| (s, starts.get(k + 1).copied().unwrap_or(len)))
        .collect()
}

fn majority(labels: &[ModeId]) -> Option<ModeId> {
    let max = labels.iter().map(|m| m.0).max()?;
    let mut counts = vec![0usize; max + 1];
    for m in labels {
        counts[m.0] += 1;
    }
    // first maximal count wins, so ties go to the smaller label
    let (best, _) = counts
        .iter()
        .enumerate()
        .fold((0, 0), |acc, (i, &c)| if c > acc.1 { (i, c) } else { acc });
    Some(ModeId(best))
}

/// Materializes `[start, end)` slices of `traj`. When the parent carries mode
/// labels, each slice gets the majority label as `true_mode`.
pub fn segments_from_bounds(traj: &Trajectory, bounds: &[(usize, usize)]) -> Vec<Subtrajectory> {
    bounds
        .iter()
        .filter(|(s, e)| e > s)
        .map(|&(s, e)| Subtrajectory {
            parent_id: traj.id.clone(),
            start_idx: s,
            end_idx: e,
            times: traj.times[s..e].to_vec(),
            states: traj.states[s..e].to_vec(),
            recovered_mode: None,
            true_mode: traj.mode_labels.as_ref().and_then(|l| majority(&l[s..e])),
        })
        .collect()
}

pub fn segment_bounds(segments: &[Subtrajectory]) -> Vec<(usize, usize)> {
    segments.iter().map(|s| (s.start_idx, s.end_idx)).collect()
}

/// Concatenates consecutive segments of one parent back into a trajectory.
/// Per-sample labels are rebuilt from each segment's `true_mode`.
pub fn concat_segments(segments: &[Subtrajectory]) -> Trajectory {
    let id = segments
        .first()
        .map(|s| s.parent_id.clone())
        .unwrap_or_default();
    let mut traj = Trajectory::new(id, Vec::new(), Vec::new());
    let labelled = !segments.is_empty() && segments.iter().all(|s| s.true_mode.is_some());
    let mut labels = Vec::new();
    for seg in segments {
        traj.times.extend_from_slice(&seg.times);
        traj.states.extend(seg.states.iter().cloned());
        if let Some(m) = seg.true_mode {
            labels.extend(std::iter::repeat_n(m, seg.len()));
        }
    }
    if labelled {
        traj.mode_labels = Some(labels);
    }
    traj
}

/// Groups segments by parent, preserving first-appearance order.
pub(crate) fn group_by_parent(segments: &[Subtrajectory]) -> Vec<Vec<&Subtrajectory>> {
    let mut groups: Vec<Vec<&Subtrajectory>> = Vec::new();
    for seg in segments {
        match groups.iter_mut().find(|g| g[0].parent_id == seg.parent_id) {
            Some(g) => g.push(seg),
            None => groups.push(vec![seg]),
        }
    }
    for g in &mut groups {
        g.sort_by_key(|s| s.start_idx);
    }
    groups
}

/// Perturbs segmentation cut points: each internal cut is moved, with
/// probability `p`, left or right by a uniform integer in `[1, 10]`.
/// Segments swallowed by a neighbour disappear; the output still covers every
/// parent exactly once.
pub fn corrupt_segmentation(
    segments: &[Subtrajectory],
    p: f64,
    rng_seed: u64,
) -> Vec<Subtrajectory> {
    let p = if p.is_finite() {
        p.clamp(0.0, 1.0)
    } else {
        0.0
    };
    if p == 0.0 {
        return segments.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(segments.len());
    for group in group_by_parent(segments) {
        let owned: Vec<Subtrajectory> = group.iter().map(|s| (*s).clone()).collect();
        let parent = concat_segments(&owned);
        let len = parent.len();
        let offset = group[0].start_idx;
        let mut cuts: Vec<usize> = Vec::new();
        for seg in group.iter().skip(1) {
            let mut c = (seg.start_idx - offset) as i64;
            if rng.random_bool(p) {
                let shift = rng.random_range(1..=10) as i64;
                c += if rng.random_bool(0.5) { shift } else { -shift };
            }
            cuts.push(c.clamp(0, len as i64) as usize);
        }
        cuts.retain(|&c| c > 0 && c < len);
        cuts.sort_unstable();
        cuts.dedup();
        let mut starts = vec![0];
        starts.extend(cuts);
        let bounds: Vec<(usize, usize)> = starts_to_bounds(&starts, len);
        let mut rebuilt = segments_from_bounds(&parent, &bounds);
        for seg in &mut rebuilt {
            seg.start_idx += offset;
            seg.end_idx += offset;
        }
        out.extend(rebuilt);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(n: usize) -> Trajectory {
        let times = (0..n).map(|i| i as f64 * 0.1).collect();
        Trajectory::new("c", times, vec![vec![2.0, -1.0]; n])
    }

    #[test]
    fn constant_trajectory_is_one_segment() {
        let traj = constant(50);
        for th in [1e-9, 1.0, 1e6] {
            let segs = finite_difference_segment(&traj, th).unwrap();
            assert_eq!(segs.len(), 1);
            assert_eq!(segs[0].len(), 50);
        }
    }

    #[test]
    fn rejects_short_and_unordered() {
        let short = Trajectory::new("s", vec![0.0], vec![vec![1.0]]);
        assert!(matches!(
            finite_difference_segment(&short, 1.0),
            Err(Error::EmptyTrajectory(1))
        ));
        let bad = Trajectory::new("b", vec![0.0, 1.0, 0.5], vec![vec![0.0]; 3]);
        assert!(matches!(
            finite_difference_segment(&bad, 1.0),
            Err(Error::NonMonotoneTime { index: 2 })
        ));
    }

    #[test]
    fn duplicate_timestamps_always_cut() {
        let traj = Trajectory::new(
            "d",
            vec![0.0, 0.1, 0.1, 0.2],
            vec![vec![0.0], vec![0.0], vec![0.0], vec![0.0]],
        );
        let segs = finite_difference_segment(&traj, 1e9).unwrap();
        assert_eq!(segment_bounds(&segs), vec![(0, 2), (2, 4)]);
    }

    #[test]
    fn labels_become_majority_true_mode() {
        let mut traj = constant(4);
        traj.states[2] = vec![100.0, 0.0];
        traj.states[3] = vec![100.0, 0.0];
        traj.mode_labels = Some(vec![ModeId(0), ModeId(0), ModeId(1), ModeId(1)]);
        let segs = finite_difference_segment(&traj, 10.0).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].true_mode, Some(ModeId(0)));
        assert_eq!(segs[1].true_mode, Some(ModeId(1)));
    }

    #[test]
    fn zero_corruption_is_identity() {
        let mut traj = constant(40);
        for i in [10, 25] {
            traj.times.insert(i, traj.times[i - 1]);
            traj.states.insert(i, vec![5.0, 5.0]);
        }
        let segs = finite_difference_segment(&traj, 1.0).unwrap();
        assert_eq!(corrupt_segmentation(&segs, 0.0, 3), segs);
    }

    #[test]
    fn corruption_is_seeded_and_covers() {
        let times: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let states = (0..200).map(|i| vec![(i / 20) as f64 * 100.0]).collect();
        let traj = Trajectory::new("x", times, states);
        let segs = finite_difference_segment(&traj, 50.0).unwrap();
        assert_eq!(segs.len(), 10);
        let a = corrupt_segmentation(&segs, 1.0, 11);
        let b = corrupt_segmentation(&segs, 1.0, 11);
        assert_eq!(a, b);
        assert_ne!(segment_bounds(&a), segment_bounds(&segs));
        let rebuilt = concat_segments(&a);
        assert_eq!(rebuilt.times, traj.times);
        assert_eq!(rebuilt.states, traj.states);
    }
}

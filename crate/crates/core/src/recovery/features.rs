use serde::{Deserialize, Serialize};

use crate::hybrid::Subtrajectory;
use crate::{Error, Result};

/// Floor added to durations before taking logs, so single-sample segments
/// get a finite feature.
const DURATION_FLOOR: f64 = 1e-3;

/// Fixed-length summary of a segment: first state, last state, mean state,
/// first finite difference (zero for a single sample) and log-duration.
pub fn segment_features(seg: &Subtrajectory) -> Result<Vec<f64>> {
    if seg.is_empty() {
        return Err(Error::EmptyTrajectory(0));
    }
    let d = seg.state_dim();
    let n = seg.len();
    let mut f = Vec::with_capacity(4 * d + 1);
    f.extend_from_slice(&seg.states[0]);
    f.extend_from_slice(&seg.states[n - 1]);
    for j in 0..d {
        f.push(seg.states.iter().map(|x| x[j]).sum::<f64>() / n as f64);
    }
    for j in 0..d {
        let diff = if n > 1 && seg.times[1] > seg.times[0] {
            (seg.states[1][j] - seg.states[0][j]) / (seg.times[1] - seg.times[0])
        } else {
            0.0
        };
        f.push(diff);
    }
    f.push((seg.duration() + DURATION_FLOOR).ln());
    Ok(f)
}

pub fn feature_dim(state_dim: usize) -> usize {
    4 * state_dim + 1
}

/// Per-column standardization; constant columns keep unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

/// Standardized features of every segment, with the scaler fitted on them.
pub fn standardized_features(segments: &[Subtrajectory]) -> Result<(Vec<Vec<f64>>, Scaler)> {
    let raw = segments
        .iter()
        .map(segment_features)
        .collect::<Result<Vec<_>>>()?;
    let scaler = Scaler::fit(&raw);
    Ok((raw.iter().map(|r| scaler.transform(r)).collect(), scaler))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(times: Vec<f64>, states: Vec<Vec<f64>>) -> Subtrajectory {
        Subtrajectory {
            parent_id: "p".into(),
            start_idx: 0,
            end_idx: times.len(),
            times,
            states,
            recovered_mode: None,
            true_mode: None,
        }
    }

    #[test]
    fn layout() {
        let s = seg(
            vec![0.0, 0.5, 1.0],
            vec![vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 4.0]],
        );
        let f = segment_features(&s).unwrap();
        assert_eq!(f.len(), feature_dim(2));
        assert_eq!(&f[..6], &[0.0, 1.0, 2.0, 4.0, 1.0, 2.0]);
        assert_eq!(&f[6..8], &[2.0, 0.0]);
        assert!((f[8] - 1.001f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn single_sample_is_finite() {
        let f = segment_features(&seg(vec![3.0], vec![vec![1.0]])).unwrap();
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn scaler_round_trip() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Scaler::fit(&rows);
        assert_eq!(s.transform(&rows[0]), vec![-1.0, 0.0]);
        assert_eq!(s.inverse(&s.transform(&rows[1])), rows[1]);
    }
}

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Homogeneity, completeness and their harmonic mean, with natural-log
/// entropies.
pub fn v_measure_scores<A, B>(truth: &[A], pred: &[B]) -> Result<VMeasure>
where
    A: Eq + Hash,
    B: Eq + Hash,
{
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(Error::LengthMismatch(0, 0));
    }
    let n = truth.len() as f64;
    let mut classes: HashMap<&A, usize> = HashMap::new();
    let mut clusters: HashMap<&B, usize> = HashMap::new();
    let mut joint: HashMap<(&A, &B), usize> = HashMap::new();
    for (a, b) in truth.iter().zip(pred) {
        *classes.entry(a).or_default() += 1;
        *clusters.entry(b).or_default() += 1;
        *joint.entry((a, b)).or_default() += 1;
    }
    let h_c = entropy(classes.values().copied(), n);
    let h_k = entropy(clusters.values().copied(), n);
    // H(C|K) = H(C,K) - H(K); H(K|C) = H(C,K) - H(C)
    let h_ck = entropy(joint.values().copied(), n);
    let homogeneity = if h_c == 0.0 {
        1.0
    } else {
        1.0 - (h_ck - h_k) / h_c
    };
    let completeness = if h_k == 0.0 {
        1.0
    } else {
        1.0 - (h_ck - h_c) / h_k
    };
    let v_measure = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    Ok(VMeasure {
        homogeneity,
        completeness,
        v_measure,
    })
}

pub fn v_measure<A: Eq + Hash, B: Eq + Hash>(truth: &[A], pred: &[B]) -> Result<f64> {
    Ok(v_measure_scores(truth, pred)?.v_measure)
}

/// Maps every predicted label to its most frequent true label (ties to the
/// smaller true label) and returns the fraction of matches.
pub fn majority_vote_accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Ok(1.0);
    }
    let mut table: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&t, &p) in truth.iter().zip(pred) {
        *table.entry(p).or_default().entry(t).or_default() += 1;
    }
    let correct: usize = table
        .values()
        .map(|row| {
            row.iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map_or(0, |(_, &c)| c)
        })
        .sum();
    Ok(correct as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relabeled_perfect_clustering() {
        let truth = [0, 0, 1, 1, 2];
        let pred = [7, 7, 3, 3, 9];
        assert_eq!(v_measure(&truth, &pred).unwrap(), 1.0);
    }

    #[test]
    fn single_predicted_cluster() {
        let s = v_measure_scores(&[0, 1, 1, 0], &[5, 5, 5, 5]).unwrap();
        assert_eq!(s.homogeneity, 0.0);
        assert_eq!(s.v_measure, 0.0);
    }

    #[test]
    fn single_class_everywhere() {
        assert_eq!(v_measure(&[1, 1, 1], &[2, 2, 2]).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            v_measure(&[0, 1], &[0]),
            Err(Error::LengthMismatch(2, 1))
        ));
    }

    #[test]
    fn majority_vote() {
        assert_eq!(
            majority_vote_accuracy(&[0, 0, 1, 1], &[5, 5, 5, 6]).unwrap(),
            0.75
        );
    }
}

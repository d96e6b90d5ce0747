//! Clustering baselines on segment feature vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Label given by [`dbscan`] to noise points.
pub const NOISE: i64 = -1;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    Ok(())
}

/// Sum of squared distances from each point to its cluster mean.
pub fn inertia(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let d = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            let c: Vec<f64> = sums[l].iter().map(|s| s / counts[l] as f64).collect();
            sq_dist(p, &c)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

/// Independent k-means++ initializations per call; the lowest inertia wins.
pub const KMEANS_RESTARTS: u64 = 20;

/// Greedy k-means++ seeding followed by Lloyd iterations until the assignment is
/// stable or 300 iterations have run, best of [`KMEANS_RESTARTS`] runs.
pub fn kmeanspp(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    check_k(k, points.len())?;
    let mut best: Option<KMeansResult> = None;
    for r in 0..KMEANS_RESTARTS {
        let run = kmeanspp_once(points, k, crate::derive_seed(seed, r));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn kmeanspp_once(points: &[Vec<f64>], k: usize, seed: u64) -> KMeansResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    // greedy seeding: the best of a few D^2-sampled candidates per center
    let trials = 2 + (k as f64).ln() as usize;
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if u < w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                pick
            } else {
                // all remaining points coincide with a centroid
                rng.random_range(0..n)
            };
            let next: Vec<f64> = points
                .iter()
                .zip(&d2)
                .map(|(p, &d)| d.min(sq_dist(p, &points[cand])))
                .collect();
            let potential = next.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, cand, next));
            }
        }
        let (_, pick, next) = best.expect("at least one trial");
        centroids.push(points[pick].clone());
        d2 = next;
    }

    let mut labels = vec![usize::MAX; n];
    let mut iterations = 0;
    for it in 0..300 {
        iterations = it + 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centroids[a]).total_cmp(&sq_dist(p, &centroids[b])))
                .unwrap();
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let d = points[0].len();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum();
    KMeansResult {
        labels,
        centroids,
        inertia,
        iterations,
    }
}

/// Agglomerative clustering with average linkage, cut at `k` clusters.
/// Labels are numbered by first appearance.
pub fn hierarchical_cluster(points: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    check_k(k, points.len())?;
    let n = points.len();
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let base: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| sq_dist(&points[i], &points[j]).sqrt())
                .collect()
        })
        .collect();
    // linkage between active clusters, updated with the Lance-Williams rule
    let mut link = base;
    let mut active = n;
    while active > k {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            if members[i].is_none() {
                continue;
            }
            for j in i + 1..n {
                if members[j].is_some() && link[i][j] < best.0 {
                    best = (link[i][j], i, j);
                }
            }
        }
        let (_, a, b) = best;
        let (na, nb) = (
            members[a].as_ref().unwrap().len() as f64,
            members[b].as_ref().unwrap().len() as f64,
        );
        for c in 0..n {
            if c != a && c != b && members[c].is_some() {
                let v = (na * link[a][c] + nb * link[b][c]) / (na + nb);
                link[a][c] = v;
                link[c][a] = v;
            }
        }
        let moved = members[b].take().unwrap();
        members[a].as_mut().unwrap().extend(moved);
        active -= 1;
    }
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        if labels[i] != usize::MAX {
            continue;
        }
        let cluster = members.iter().flatten().find(|m| m.contains(&i)).unwrap();
        for &p in cluster {
            labels[p] = next;
        }
        next += 1;
    }
    Ok(labels)
}

/// DBSCAN with Euclidean `eps` neighborhoods (the point itself counts
/// towards `min_pts`). Noise points get [`NOISE`].
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Result<Vec<i64>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let n = points.len();
    let eps2 = eps * eps;
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| sq_dist(&points[i], &points[j]) <= eps2)
            .collect()
    };
    let mut labels: Vec<Option<i64>> = vec![None; n];
    let mut cluster = 0i64;
    for i in 0..n {
        if labels[i].is_some() {
            continue;
        }
        let nb = neighbors(i);
        if nb.len() < min_pts {
            labels[i] = Some(NOISE);
            continue;
        }
        labels[i] = Some(cluster);
        let mut queue = nb;
        while let Some(j) = queue.pop() {
            match labels[j] {
                Some(NOISE) => labels[j] = Some(cluster),
                Some(_) => continue,
                None => {
                    labels[j] = Some(cluster);
                    let nj = neighbors(j);
                    if nj.len() >= min_pts {
                        queue.extend(nj);
                    }
                }
            }
        }
        cluster += 1;
    }
    Ok(labels.into_iter().map(|l| l.unwrap()).collect())
}

/// Converts DBSCAN output into cluster labels for scoring: all noise points
/// share one extra cluster, so they cannot be credited as a correct group
/// unless they happen to share a class.
pub fn noise_as_cluster(labels: &[i64]) -> Vec<usize> {
    let max = labels.iter().copied().max().unwrap_or(-1);
    let noise = (max + 1) as usize;
    labels
        .iter()
        .map(|&l| if l == NOISE { noise } else { l as usize })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..10 {
            let e = (i as f64) * 0.01;
            pts.push(vec![e, -e]);
            truth.push(0);
            pts.push(vec![10.0 + e, 10.0 - e]);
            truth.push(1);
        }
        (pts, truth)
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
    }

    #[test]
    fn separable_blobs() {
        let (pts, truth) = blobs();
        assert!(same_partition(
            &kmeanspp(&pts, 2, 0).unwrap().labels,
            &truth
        ));
        assert!(same_partition(
            &hierarchical_cluster(&pts, 2).unwrap(),
            &truth
        ));
        let db = dbscan(&pts, 1.0, 3).unwrap();
        assert!(db.iter().all(|&l| l != NOISE));
        assert!(same_partition(&noise_as_cluster(&db), &truth));
    }

    #[test]
    fn k_equals_n() {
        let pts = vec![vec![0.0], vec![1.0], vec![5.0]];
        let mut km = kmeanspp(&pts, 3, 1).unwrap().labels;
        km.sort();
        km.dedup();
        assert_eq!(km.len(), 3);
        assert_eq!(hierarchical_cluster(&pts, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn too_many_clusters() {
        let pts = vec![vec![0.0]];
        assert!(matches!(
            kmeanspp(&pts, 2, 0),
            Err(Error::TooManyClusters { .. })
        ));
        assert!(hierarchical_cluster(&pts, 0).is_err());
    }

    #[test]
    fn isolated_point_is_noise() {
        let pts = vec![vec![0.0], vec![0.1], vec![0.2], vec![50.0]];
        assert_eq!(dbscan(&pts, 0.5, 2).unwrap(), vec![0, 0, 0, NOISE]);
        assert_eq!(noise_as_cluster(&[0, 0, 0, NOISE]), vec![0, 0, 0, 1]);
    }
}

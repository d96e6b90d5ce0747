use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::matrix::Matrix;
use crate::{Error, Result};

/// A categorical sample together with the distribution it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalLatent {
    pub probs: Vec<f64>,
    pub one_hot: Vec<f64>,
}

impl CategoricalLatent {
    pub fn index(&self) -> usize {
        self.one_hot
            .iter()
            .position(|&v| v == 1.0)
            .expect("one-hot")
    }
}

pub fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution(
            "empty probability vector".into(),
        ));
    }
    if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidDistribution(format!(
            "entry {p} is not a probability"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!(
            "probabilities sum to {total}"
        )));
    }
    Ok(())
}

/// Inverse-CDF draw of a category; zero-probability categories are never
/// returned.
pub fn sample_category<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

pub fn straight_through_sample<R: Rng + ?Sized>(
    probs: &[f64],
    rng: &mut R,
) -> Result<CategoricalLatent> {
    check_probs(probs)?;
    let k = sample_category(probs, rng);
    let mut one_hot = vec![0.0; probs.len()];
    one_hot[k] = 1.0;
    Ok(CategoricalLatent {
        probs: probs.to_vec(),
        one_hot,
    })
}

/// Samples one category per row of the `n x m` probability node. The
/// returned node is exactly one-hot in the forward pass and passes its
/// adjoint unchanged to `probs`.
pub fn sample_straight_through<R: Rng + ?Sized>(
    g: &mut Graph,
    probs: Var,
    rng: &mut R,
) -> Result<(Var, Vec<usize>)> {
    let p = g.value(probs).clone();
    let mut value = Matrix::zeros(p.rows, p.cols);
    let mut picks = Vec::with_capacity(p.rows);
    for r in 0..p.rows {
        let latent = straight_through_sample(p.row(r), rng)?;
        let k = latent.index();
        value.set(r, k, 1.0);
        picks.push(k);
    }
    Ok((g.straight_through(probs, value), picks))
}

/// `mu + sigma * eps` with `eps ~ N(0, I)`; gradients reach both `mu` and
/// `sigma`.
pub fn gaussian_reparam<R: Rng + ?Sized>(
    g: &mut Graph,
    mu: Var,
    sigma: Var,
    rng: &mut R,
) -> Result<Var> {
    let s = g.value(sigma);
    if let Some(&bad) = s.data.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::NonPositiveSigma(bad));
    }
    let (r, c) = s.shape();
    let eps: Vec<f64> = (0..r * c).map(|_| StandardNormal.sample(rng)).collect();
    let e = g.input(Matrix {
        rows: r,
        cols: c,
        data: eps,
    });
    let scaled = g.mul(sigma, e);
    Ok(g.add(mu, scaled))
}

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::spline::{n_spline_params, rq_spline_tape, RqSpline};
use crate::nn::{
    normal_log_sf, Activation, Graph, Matrix, Mlp, MlpCheckpoint, MlpSpec, ParamStore, Unary, Var,
};
use crate::recovery::Scaler;
use crate::{Error, Result};

pub type Edge = (usize, usize);

pub fn edge_key(edge: Edge) -> String {
    format!("{}->{}", edge.0, edge.1)
}

pub fn parse_edge_key(key: &str) -> Result<Edge> {
    let bad = || Error::InvalidConfig(format!("edge key {key:?} is not of the form z->z'"));
    let (a, b) = key.split_once("->").ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn log_std_normal(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

/// Log-density of `tau` under log-normal(0, 1), the law of an untrained flow.
pub fn lognormal_log_density(tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTime(tau));
    }
    let y = tau.ln();
    Ok(log_std_normal(y) - y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowHyper {
    pub n_layers: usize,
    pub n_bins: usize,
    pub tail_bound: f64,
    pub conditioner_hidden: Vec<usize>,
    /// Also condition on the state and time at the start of the dwell.
    pub condition_on_state: bool,
}

impl Default for FlowHyper {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_bins: 8,
            tail_bound: 5.0,
            conditioner_hidden: vec![32, 32],
            condition_on_state: false,
        }
    }
}

impl FlowHyper {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_bins < 2 {
            return Err(Error::InvalidConfig(
                "spline flow needs at least one layer and two bins".into(),
            ));
        }
        if !(self.tail_bound > 0.0) {
            return Err(Error::InvalidConfig("tail_bound must be positive".into()));
        }
        Ok(())
    }
}

/// Conditional density over interevent times, one shared conditioner for all
/// edges.
///
/// With `y = (ln tau - loc_e) / scale_e`, the stacked splines map `y` to a
/// standard normal variable, so
/// `log p(tau) = log N(S(y)) + log S'(y) - ln scale_e - ln tau`.
/// Sampling runs the splines backwards from a normal draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFlow {
    pub edges: Vec<Edge>,
    pub n_layers: usize,
    pub n_bins: usize,
    pub tail_bound: f64,
    pub condition_on_state: bool,
    /// Standardizes `(x, t)` conditioning; unused without state conditioning.
    pub cond_scaler: Scaler,
    pub loc: Vec<f64>,
    pub scale: Vec<f64>,
    pub conditioner: Mlp,
    pub store: ParamStore,
}

impl SplineFlow {
    /// A flow whose splines start as the identity, with `loc = 0` and
    /// `scale = 1` for every edge (log-normal(0, 1) interevent times).
    pub fn new<R: Rng + ?Sized>(
        edges: Vec<Edge>,
        state_dim: usize,
        hyper: &FlowHyper,
        rng: &mut R,
    ) -> Result<Self> {
        hyper.validate()?;
        if edges.is_empty() {
            return Err(Error::NoSupervision);
        }
        let cond_dim = if hyper.condition_on_state {
            state_dim + 1
        } else {
            0
        };
        let mut dims = vec![edges.len() + cond_dim];
        dims.extend(&hyper.conditioner_hidden);
        dims.push(hyper.n_layers * n_spline_params(hyper.n_bins));
        let mut store = ParamStore::new();
        let conditioner = Mlp::new(
            MlpSpec::new(&dims, Activation::Relu),
            &mut store,
            "conditioner",
            rng,
        )?;
        conditioner.zero_output_layer(&mut store);
        let n = edges.len();
        Ok(Self {
            edges,
            n_layers: hyper.n_layers,
            n_bins: hyper.n_bins,
            tail_bound: hyper.tail_bound,
            condition_on_state: hyper.condition_on_state,
            cond_scaler: Scaler::identity(cond_dim),
            loc: vec![0.0; n],
            scale: vec![1.0; n],
            conditioner,
            store,
        })
    }

    pub fn edge_index(&self, edge: Edge) -> Option<usize> {
        self.edges.iter().position(|&e| e == edge)
    }

    pub fn has_edge(&self, edge: Edge) -> bool {
        self.edge_index(edge).is_some()
    }

    /// One-hot edge indicator, followed by the standardized `(x, t)` when
    /// conditioning on state. Rows of the tape methods use this layout.
    pub fn conditioner_input(&self, e: usize, t: f64, x: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.edges.len()];
        v[e] = 1.0;
        if self.condition_on_state {
            let mut c = x.to_vec();
            c.push(t);
            v.extend(self.cond_scaler.transform(&c));
        }
        v
    }

    fn splines(&self, e: usize, t: f64, x: &[f64]) -> Result<Vec<RqSpline>> {
        let input = Matrix::row_vector(&self.conditioner_input(e, t, x));
        let raw = self.conditioner.eval(&self.store, &input)?;
        let p = n_spline_params(self.n_bins);
        (0..self.n_layers)
            .map(|l| {
                RqSpline::from_params(&raw.data[l * p..(l + 1) * p], self.n_bins, self.tail_bound)
            })
            .collect()
    }

    fn index(&self, edge: Edge) -> Result<usize> {
        self.edge_index(edge)
            .ok_or_else(|| Error::InvalidConfig(format!("flow has no edge {}", edge_key(edge))))
    }

    /// `log p(tau)` for `edge`, conditioned on `(t, x)` when enabled.
    pub fn log_density(&self, edge: Edge, tau: f64, t: f64, x: &[f64]) -> Result<f64> {
        if !(tau > 0.0) {
            return Err(Error::NonPositiveTime(tau));
        }
        let e = self.index(edge)?;
        let (z, logdet) = self.latent(e, tau, t, x)?;
        Ok(log_std_normal(z) + logdet - self.scale[e].ln() - tau.ln())
    }

    /// Maps a base draw `z` to an interevent time.
    pub fn transform(&self, edge: Edge, z: f64, t: f64, x: &[f64]) -> Result<f64> {
        let e = self.index(edge)?;
        let mut y = z;
        for s in self.splines(e, t, x)?.iter().rev() {
            y = s.inverse(y);
        }
        Ok((self.loc[e] + self.scale[e] * y).exp())
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        edge: Edge,
        t: f64,
        x: &[f64],
        rng: &mut R,
    ) -> Result<f64> {
        let z: f64 = rng.sample(StandardNormal);
        self.transform(edge, z, t, x)
    }

    /// Base-space image `z` of `tau` and the summed log-derivative of the
    /// splines, for one batch row per `(edge, tau, conditioner input)`.
    fn latent_tape(&self, g: &mut Graph, rows: &[(usize, f64, Vec<f64>)]) -> Result<(Var, Var)> {
        let inputs: Vec<Vec<f64>> = rows.iter().map(|(_, _, c)| c.clone()).collect();
        let input = g.input(Matrix::from_rows(&inputs)?);
        let raw = self
            .conditioner
            .forward(g, &self.store, input, false, None)?;
        let ys: Vec<f64> = rows
            .iter()
            .map(|&(e, tau, _)| (tau.ln() - self.loc[e]) / self.scale[e])
            .collect();
        let mut y = g.input(Matrix::column(&ys));
        let p = n_spline_params(self.n_bins);
        let mut total: Option<Var> = None;
        for l in 0..self.n_layers {
            let params = g.slice_cols(raw, l * p, (l + 1) * p);
            let (next, ld) = rq_spline_tape(g, y, params, self.n_bins, self.tail_bound);
            y = next;
            total = Some(match total {
                Some(t) => g.add(t, ld),
                None => ld,
            });
        }
        Ok((y, total.expect("at least one layer")))
    }

    /// Differentiable summed negative log-density of `rows`.
    pub fn nll_sum_tape(&self, g: &mut Graph, rows: &[(usize, f64, Vec<f64>)]) -> Result<Var> {
        let (z, logdet) = self.latent_tape(g, rows)?;
        let consts: Vec<f64> = rows
            .iter()
            .map(|&(e, tau, _)| 0.5 * (2.0 * PI).ln() + self.scale[e].ln() + tau.ln())
            .collect();
        let sq = g.square(z);
        let half = g.scale(sq, 0.5);
        let nll = g.sub(half, logdet);
        let c = g.input(Matrix::column(&consts));
        let nll = g.add(nll, c);
        Ok(g.sum(nll))
    }

    /// Differentiable summed negative log-survival `-ln P(T_e > tau)` of `rows`.
    pub fn neg_log_sf_sum_tape(
        &self,
        g: &mut Graph,
        rows: &[(usize, f64, Vec<f64>)],
    ) -> Result<Var> {
        let (z, _) = self.latent_tape(g, rows)?;
        let lsf = g.unary(z, Unary::NormalLogSf);
        let s = g.sum(lsf);
        Ok(g.scale(s, -1.0))
    }

    /// Differentiable mean negative log-density of a batch.
    pub fn nll_tape(&self, g: &mut Graph, rows: &[(usize, f64, Vec<f64>)]) -> Result<Var> {
        let s = self.nll_sum_tape(g, rows)?;
        Ok(g.scale(s, 1.0 / rows.len() as f64))
    }

    fn latent(&self, e: usize, tau: f64, t: f64, x: &[f64]) -> Result<(f64, f64)> {
        let mut y = (tau.ln() - self.loc[e]) / self.scale[e];
        let mut logdet = 0.0;
        for s in self.splines(e, t, x)? {
            let (next, ld) = s.forward(y);
            y = next;
            logdet += ld;
        }
        Ok((y, logdet))
    }

    /// `ln P(T > tau)` for the edge's interevent time `T`.
    pub fn log_survival(&self, edge: Edge, tau: f64, t: f64, x: &[f64]) -> Result<f64> {
        if !(tau > 0.0) {
            return Err(Error::NonPositiveTime(tau));
        }
        let (z, _) = self.latent(self.index(edge)?, tau, t, x)?;
        Ok(normal_log_sf(z))
    }

    pub fn checkpoint(&self) -> FlowCheckpoint {
        FlowCheckpoint {
            n_layers: self.n_layers,
            n_bins: self.n_bins,
            tail_bound: self.tail_bound,
            condition_on_state: self.condition_on_state,
            cond_scaler: self.cond_scaler.clone(),
            conditioner: self.conditioner.checkpoint(&self.store),
        }
    }
}

/// Edge-independent part of a serialized flow; per-edge `loc`/`scale` live
/// in the edge entries of the event-module checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowCheckpoint {
    pub n_layers: usize,
    pub n_bins: usize,
    pub tail_bound: f64,
    pub condition_on_state: bool,
    pub cond_scaler: Scaler,
    pub conditioner: MlpCheckpoint,
}

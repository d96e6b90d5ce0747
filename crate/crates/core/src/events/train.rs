use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::flow::{
    edge_key, lognormal_log_density, parse_edge_key, Edge, FlowCheckpoint, FlowHyper, SplineFlow,
};
use super::jump::JumpNet;
use crate::nn::{AdamState, Graph, Matrix, Mlp, MlpCheckpoint, ParamStore};
use crate::recovery::{EventSupervision, Scaler};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventHyper {
    pub flow: FlowHyper,
    pub jump_hidden: Vec<usize>,
    pub iterations: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Treat a dwell that ended through a sibling edge as a right-censored
    /// observation for every other edge leaving the same mode. This makes the
    /// arg-min sampler reproduce the observed dwell law.
    pub competing_risks: bool,
}

impl Default for EventHyper {
    fn default() -> Self {
        Self {
            flow: FlowHyper::default(),
            jump_hidden: vec![32],
            iterations: 4000,
            lr: 2e-3,
            batch_size: 256,
            seed: 0,
            competing_risks: true,
        }
    }
}

/// Interevent-time flow plus one jump net per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EventModule {
    pub flow: SplineFlow,
    pub jumps: BTreeMap<Edge, JumpNet>,
    /// Shared standardization of states, used by the jump nets and for
    /// reporting jump errors.
    pub state_scaler: Scaler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTrainingLog {
    pub flow_losses: Vec<f64>,
    pub final_jump_losses: BTreeMap<String, f64>,
    /// Samples skipped because their interevent time was not positive.
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub n: usize,
    pub nll: f64,
    pub jump_mse: f64,
}

/// Held-out scores. NLL is the mean negative log-likelihood of the observed
/// `(tau, target)` pair (see [`EventModule::log_event_likelihood`]); jump MSE
/// is measured in the module's standardized state coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMetrics {
    pub edges: BTreeMap<String, EdgeMetrics>,
    pub pooled_nll: f64,
    pub pooled_jump_mse: f64,
    pub n: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn minibatch<'a, T>(items: &'a [T], size: usize, rng: &mut ChaCha8Rng) -> Vec<&'a T> {
    if items.len() <= size {
        items.iter().collect()
    } else {
        sample_indices(rng, items.len(), size)
            .into_iter()
            .map(|i| &items[i])
            .collect()
    }
}

/// Fits the interevent-time flow by maximum likelihood and one jump net per
/// edge by least squares, both with Adam.
pub fn train_event_module(
    sup: &EventSupervision,
    hyper: &EventHyper,
) -> Result<(EventModule, EventTrainingLog)> {
    hyper.flow.validate()?;
    let mut dropped = 0;
    let mut clean: BTreeMap<Edge, Vec<&crate::recovery::EventSample>> = BTreeMap::new();
    for (&edge, samples) in sup {
        for s in samples {
            if s.tau > 0.0 && s.tau.is_finite() {
                clean.entry(edge).or_default().push(s);
            } else {
                dropped += 1;
            }
        }
    }
    if clean.is_empty() {
        return Err(Error::NoSupervision);
    }
    let state_dim = clean.values().next().unwrap()[0].x_pre.len();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let edges: Vec<Edge> = clean.keys().copied().collect();
    let mut flow = SplineFlow::new(edges.clone(), state_dim, &hyper.flow, &mut rng)?;

    let all_states: Vec<&[f64]> = clean
        .values()
        .flatten()
        .flat_map(|s| [s.x_pre.as_slice(), s.x_post.as_slice()])
        .collect();
    let state_scaler = Scaler::fit(&all_states);
    if flow.condition_on_state {
        let rows: Vec<Vec<f64>> = clean
            .values()
            .flatten()
            .map(|s| {
                let mut c = s.x_start.clone();
                c.push(s.t_start);
                c
            })
            .collect();
        flow.cond_scaler = Scaler::fit(&rows);
    }
    for (e, edge) in edges.iter().enumerate() {
        let logs: Vec<f64> = clean[edge].iter().map(|s| s.tau.ln()).collect();
        let (mean, std) = mean_std(&logs);
        flow.loc[e] = mean;
        flow.scale[e] = if logs.len() >= 2 && std > 1e-3 {
            std
        } else {
            1.0
        };
    }

    type Row = (usize, f64, Vec<f64>);
    // each observed row with the censored rows of its sibling edges
    let rows: Vec<(Row, Vec<Row>)> = edges
        .iter()
        .enumerate()
        .flat_map(|(e, edge)| clean[edge].iter().map(move |s| (e, *edge, s)))
        .map(|(e, edge, s)| {
            let censored = if hyper.competing_risks {
                edges
                    .iter()
                    .enumerate()
                    .filter(|(_, other)| other.0 == edge.0 && **other != edge)
                    .map(|(o, _)| (o, s.tau, flow.conditioner_input(o, s.t_start, &s.x_start)))
                    .collect()
            } else {
                Vec::new()
            };
            (
                (e, s.tau, flow.conditioner_input(e, s.t_start, &s.x_start)),
                censored,
            )
        })
        .collect();
    let ids = flow.conditioner.param_ids();
    let mut opt = AdamState::new(&flow.store, ids, hyper.lr);
    let mut flow_losses = Vec::with_capacity(hyper.iterations);
    for iteration in 0..hyper.iterations {
        let batch = minibatch(&rows, hyper.batch_size, &mut rng);
        let observed: Vec<Row> = batch.iter().map(|r| r.0.clone()).collect();
        let censored: Vec<Row> = batch.iter().flat_map(|r| r.1.iter().cloned()).collect();
        let mut g = Graph::new();
        let mut total = flow.nll_sum_tape(&mut g, &observed)?;
        if !censored.is_empty() {
            let c = flow.neg_log_sf_sum_tape(&mut g, &censored)?;
            total = g.add(total, c);
        }
        let loss = g.scale(total, 1.0 / observed.len() as f64);
        let value = g.value(loss).scalar();
        if !value.is_finite() {
            return Err(Error::DivergedLoss { iteration });
        }
        flow_losses.push(value);
        g.backward(loss).accumulate(&g, &mut flow.store);
        opt.step(&mut flow.store)
            .map_err(|_| Error::DivergedLoss { iteration })?;
    }

    let mut jumps = BTreeMap::new();
    let mut final_jump_losses = BTreeMap::new();
    for edge in &edges {
        let mut net = JumpNet::new(state_scaler.clone(), &hyper.jump_hidden, &mut rng)?;
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = clean[edge]
            .iter()
            .map(|s| {
                (
                    state_scaler.transform(&s.x_pre),
                    state_scaler.transform(&s.x_post),
                )
            })
            .collect();
        let mut opt = AdamState::new(&net.store, net.mlp.param_ids(), hyper.lr);
        let mut last = f64::NAN;
        for iteration in 0..hyper.iterations {
            let batch = minibatch(&pairs, hyper.batch_size, &mut rng);
            let inputs: Vec<&[f64]> = batch.iter().map(|p| p.0.as_slice()).collect();
            let targets: Vec<&[f64]> = batch.iter().map(|p| p.1.as_slice()).collect();
            let mut g = Graph::new();
            let u = g.input(Matrix::from_rows(&inputs)?);
            let pred = net.forward_normalized(&mut g, u)?;
            let tgt = g.input(Matrix::from_rows(&targets)?);
            let diff = g.sub(pred, tgt);
            let sq = g.square(diff);
            let loss = g.mean(sq);
            last = g.value(loss).scalar();
            if !last.is_finite() {
                return Err(Error::DivergedLoss { iteration });
            }
            g.backward(loss).accumulate(&g, &mut net.store);
            opt.step(&mut net.store)
                .map_err(|_| Error::DivergedLoss { iteration })?;
        }
        final_jump_losses.insert(edge_key(*edge), last);
        jumps.insert(*edge, net);
    }
    let module = EventModule {
        flow,
        jumps,
        state_scaler,
    };
    Ok((
        module,
        EventTrainingLog {
            flow_losses,
            final_jump_losses,
            dropped,
        },
    ))
}

impl EventModule {
    /// Applies the edge's jump net; unknown edges leave the state unchanged.
    pub fn jump(&self, edge: Edge, x: &[f64]) -> Result<Vec<f64>> {
        match self.jumps.get(&edge) {
            Some(net) => net.apply(x),
            None => Ok(x.to_vec()),
        }
    }

    /// Log-density of `tau`; edges without training data fall back to the
    /// untrained law, log-normal(0, 1).
    pub fn log_density_or_prior(&self, edge: Edge, tau: f64, t: f64, x: &[f64]) -> Result<f64> {
        if self.flow.has_edge(edge) {
            self.flow.log_density(edge, tau, t, x)
        } else {
            lognormal_log_density(tau)
        }
    }

    /// Log-likelihood of leaving `edge.0` through `edge` after `tau` under
    /// the arg-min sampler: the edge's density times the survival of every
    /// other edge leaving the same mode.
    pub fn log_event_likelihood(&self, edge: Edge, tau: f64, t: f64, x: &[f64]) -> Result<f64> {
        let mut ll = self.log_density_or_prior(edge, tau, t, x)?;
        if self.flow.has_edge(edge) {
            for &other in self
                .flow
                .edges
                .iter()
                .filter(|o| o.0 == edge.0 && **o != edge)
            {
                ll += self.flow.log_survival(other, tau, t, x)?;
            }
        }
        Ok(ll)
    }

    pub fn checkpoint(&self) -> EventCheckpoint {
        let edges = self
            .flow
            .edges
            .iter()
            .enumerate()
            .map(|(i, &edge)| {
                (
                    edge_key(edge),
                    EdgeCheckpoint {
                        index: i,
                        loc: self.flow.loc[i],
                        scale: self.flow.scale[i],
                        jump: self.jumps.get(&edge).map(|j| j.mlp.checkpoint(&j.store)),
                    },
                )
            })
            .collect();
        EventCheckpoint {
            flow: self.flow.checkpoint(),
            state_scaler: self.state_scaler.clone(),
            edges,
        }
    }

    pub fn from_checkpoint(ckpt: &EventCheckpoint) -> Result<Self> {
        let mut entries: Vec<(usize, Edge, &EdgeCheckpoint)> = ckpt
            .edges
            .iter()
            .map(|(k, v)| Ok((v.index, parse_edge_key(k)?, v)))
            .collect::<Result<_>>()?;
        entries.sort_by_key(|e| e.0);
        if entries.iter().enumerate().any(|(i, e)| e.0 != i) {
            return Err(Error::InvalidConfig(
                "edge indices must be 0..n without gaps".into(),
            ));
        }
        let mut store = ParamStore::new();
        let conditioner = Mlp::from_checkpoint(&ckpt.flow.conditioner, &mut store)?;
        let flow = SplineFlow {
            edges: entries.iter().map(|e| e.1).collect(),
            n_layers: ckpt.flow.n_layers,
            n_bins: ckpt.flow.n_bins,
            tail_bound: ckpt.flow.tail_bound,
            condition_on_state: ckpt.flow.condition_on_state,
            cond_scaler: ckpt.flow.cond_scaler.clone(),
            loc: entries.iter().map(|e| e.2.loc).collect(),
            scale: entries.iter().map(|e| e.2.scale).collect(),
            conditioner,
            store,
        };
        let mut jumps = BTreeMap::new();
        for (_, edge, entry) in &entries {
            if let Some(j) = &entry.jump {
                let mut store = ParamStore::new();
                let mlp = Mlp::from_checkpoint(j, &mut store)?;
                jumps.insert(
                    *edge,
                    JumpNet {
                        mlp,
                        store,
                        scaler: ckpt.state_scaler.clone(),
                    },
                );
            }
        }
        Ok(Self {
            flow,
            jumps,
            state_scaler: ckpt.state_scaler.clone(),
        })
    }
}

/// Serialized event module; per-edge entries are keyed `"z->z'"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCheckpoint {
    pub flow: FlowCheckpoint,
    pub state_scaler: Scaler,
    pub edges: BTreeMap<String, EdgeCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCheckpoint {
    /// Position of the edge in the conditioner's one-hot code.
    pub index: usize,
    pub loc: f64,
    pub scale: f64,
    pub jump: Option<MlpCheckpoint>,
}

/// Scores `module` on held-out supervision.
pub fn evaluate_event_module(module: &EventModule, sup: &EventSupervision) -> Result<EventMetrics> {
    evaluate_event_module_scaled(module, sup, &module.state_scaler)
}

/// As [`evaluate_event_module`], measuring jump errors in the coordinates of
/// `scaler` so that different modules can be compared.
pub fn evaluate_event_module_scaled(
    module: &EventModule,
    sup: &EventSupervision,
    scaler: &Scaler,
) -> Result<EventMetrics> {
    let mut edges = BTreeMap::new();
    let (mut nll_sum, mut mse_sum, mut n_total) = (0.0, 0.0, 0usize);
    for (&edge, samples) in sup {
        let valid: Vec<_> = samples.iter().filter(|s| s.tau > 0.0).collect();
        if valid.is_empty() {
            continue;
        }
        let (mut nll, mut mse) = (0.0, 0.0);
        for s in &valid {
            nll -= module.log_event_likelihood(edge, s.tau, s.t_start, &s.x_start)?;
            let pred = scaler.transform(&module.jump(edge, &s.x_pre)?);
            let truth = scaler.transform(&s.x_post);
            mse += pred
                .iter()
                .zip(&truth)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / pred.len() as f64;
        }
        let n = valid.len();
        nll_sum += nll;
        mse_sum += mse;
        n_total += n;
        edges.insert(
            edge_key(edge),
            EdgeMetrics {
                n,
                nll: nll / n as f64,
                jump_mse: mse / n as f64,
            },
        );
    }
    if n_total == 0 {
        return Err(Error::NoSupervision);
    }
    Ok(EventMetrics {
        edges,
        pooled_nll: nll_sum / n_total as f64,
        pooled_jump_mse: mse_sum / n_total as f64,
        n: n_total,
    })
}

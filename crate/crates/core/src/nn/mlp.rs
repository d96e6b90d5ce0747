use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Unary, Var};
use super::matrix::Matrix;
use super::params::{ParamId, ParamStore, ParamTensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softplus,
    Tanh,
    Silu,
    None,
}

impl Activation {
    fn unary(self) -> Option<Unary> {
        match self {
            Self::Relu => Some(Unary::Relu),
            Self::Softplus => Some(Unary::Softplus),
            Self::Tanh => Some(Unary::Tanh),
            Self::Silu => Some(Unary::Silu),
            Self::None => None,
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        self.unary().map_or(x, |u| u.apply(x))
    }
}

/// Layer widths, one activation and one dropout rate per hidden layer. The
/// output layer is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dropout: Vec<f64>,
}

impl MlpSpec {
    /// Same activation on every hidden layer, no dropout.
    pub fn new(layer_dims: &[usize], activation: Activation) -> Self {
        let hidden = layer_dims.len().saturating_sub(2);
        Self {
            layer_dims: layer_dims.to_vec(),
            activations: vec![activation; hidden],
            dropout: vec![0.0; hidden],
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout.iter_mut().for_each(|d| *d = rate);
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "MLP needs at least two positive layer widths, got {:?}",
                self.layer_dims
            )));
        }
        let hidden = self.layer_dims.len() - 2;
        if self.activations.len() != hidden || self.dropout.len() != hidden {
            return Err(Error::InvalidConfig(format!(
                "{hidden} hidden layers need as many activations and dropout rates"
            )));
        }
        if let Some(d) = self.dropout.iter().find(|d| !(0.0..1.0).contains(*d)) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {d} outside [0, 1)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

impl Mlp {
    /// Registers the layers in `store` with fan-in uniform initialization
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn new<R: Rng + ?Sized>(
        spec: MlpSpec,
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, w) in spec.layer_dims.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            weights.push(store.add_uniform(format!("{name}.{l}.weight"), w[0], w[1], bound, rng));
            biases.push(store.add_uniform(format!("{name}.{l}.bias"), 1, w[1], bound, rng));
        }
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.weights.iter().chain(&self.biases).copied().collect()
    }

    /// Zeroes the output layer so the network starts as the zero map.
    pub fn zero_output_layer(&self, store: &mut ParamStore) {
        let l = self.weights.len() - 1;
        for id in [self.weights[l], self.biases[l]] {
            store.get_mut(id).values.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.spec.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "MLP expects {} input columns, got {cols}",
                self.spec.input_dim()
            )));
        }
        Ok(())
    }

    /// Differentiable forward pass. Dropout runs only when `train` is set;
    /// kept units are divided by the keep probability, so evaluation needs
    /// no rescaling.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        train: bool,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        self.check_input(g.value(x).cols)?;
        let needs_rng = train && self.spec.dropout.iter().any(|&d| d > 0.0);
        if needs_rng && rng.is_none() {
            return Err(Error::InvalidConfig(
                "dropout in training mode needs an rng".into(),
            ));
        }
        let mut h = x;
        for l in 0..self.spec.n_layers() {
            let w = g.param(store, self.weights[l]);
            let b = g.param(store, self.biases[l]);
            let z = g.matmul(h, w);
            h = g.add_row(z, b);
            if l + 1 == self.spec.n_layers() {
                break;
            }
            if let Some(u) = self.spec.activations[l].unary() {
                h = g.unary(h, u);
            }
            let rate = self.spec.dropout[l];
            if train && rate > 0.0 {
                let rng = rng.as_deref_mut().expect("checked above");
                let keep = 1.0 - rate;
                let (r, c) = g.value(h).shape();
                let mask = (0..r * c)
                    .map(|_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let m = g.input(Matrix {
                    rows: r,
                    cols: c,
                    data: mask,
                });
                h = g.mul(h, m);
            }
        }
        Ok(h)
    }

    /// Evaluation-mode forward pass without a tape.
    pub fn eval(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        self.check_input(x.cols)?;
        let mut h = x.clone();
        for l in 0..self.spec.n_layers() {
            let b = &store.get(self.biases[l]).values;
            h = h.matmul(&store.get(self.weights[l]).to_matrix());
            for r in 0..h.rows {
                for (o, bv) in h.row_mut(r).iter_mut().zip(b) {
                    *o += bv;
                }
            }
            if l + 1 < self.spec.n_layers() {
                let act = self.spec.activations[l];
                h.data.iter_mut().for_each(|v| *v = act.apply(*v));
            }
        }
        Ok(h)
    }

    pub fn checkpoint(&self, store: &ParamStore) -> MlpCheckpoint {
        MlpCheckpoint {
            spec: self.spec.clone(),
            tensors: self
                .param_ids()
                .iter()
                .map(|&id| store.get(id).clone())
                .collect(),
        }
    }

    /// Registers the checkpointed tensors in `store`.
    pub fn from_checkpoint(ckpt: &MlpCheckpoint, store: &mut ParamStore) -> Result<Self> {
        ckpt.spec.validate()?;
        let n = ckpt.spec.n_layers();
        if ckpt.tensors.len() != 2 * n {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {} tensors, spec needs {}",
                ckpt.tensors.len(),
                2 * n
            )));
        }
        let mut ids = Vec::new();
        for (k, t) in ckpt.tensors.iter().enumerate() {
            let l = k % n;
            let (d_in, d_out) = (ckpt.spec.layer_dims[l], ckpt.spec.layer_dims[l + 1]);
            let expected = if k < n { (d_in, d_out) } else { (1, d_out) };
            if (t.rows, t.cols) != expected || t.values.len() != t.rows * t.cols {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {} has the wrong shape",
                    t.name
                )));
            }
            if !t.values.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "tensor {} has non-finite values",
                    t.name
                )));
            }
            ids.push(store.add(t.name.clone(), t.to_matrix()));
        }
        Ok(Self {
            spec: ckpt.spec.clone(),
            biases: ids.split_off(n),
            weights: ids,
        })
    }
}

/// The JSON checkpoint of one network: its spec and its flat tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub spec: MlpSpec,
    pub tensors: Vec<ParamTensor>,
}

/// One-shot forward pass returning the tape with the output node.
pub fn mlp_forward(
    mlp: &Mlp,
    store: &ParamStore,
    input: &Matrix,
    train: bool,
    rng: Option<&mut dyn RngCore>,
) -> Result<(Graph, Var)> {
    let mut g = Graph::new();
    let x = g.input(input.clone());
    let y = mlp.forward(&mut g, store, x, train, rng)?;
    Ok((g, y))
}

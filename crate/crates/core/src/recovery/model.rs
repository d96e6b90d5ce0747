use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::features::{feature_dim, segment_features, Scaler};
use crate::hybrid::{StateVec, Subtrajectory};
use crate::nn::{
    gaussian_reparam, sample_straight_through, Activation, Graph, Matrix, Mlp, MlpCheckpoint,
    MlpSpec, ParamId, ParamStore, Var,
};
use crate::solvers::step_rk4;
use crate::{Error, Result};

/// How the encoder output becomes the mixing weights `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentKind {
    /// One-hot sample with straight-through gradients.
    Categorical,
    /// The softmax probabilities themselves.
    Softmax,
    /// `z ~ N(mu, sigma)` by reparametrization (Latent NODE).
    GaussianReparam,
    /// Raw encoder output (data-controlled NODE).
    Deterministic,
    /// No encoder; a single zero-augmented field (augmented NODE).
    None,
}

/// What the encoder sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderInput {
    /// One summary vector per segment; `z` is fixed over the segment.
    Segment,
    /// The current state; `z` is redrawn at every integration step.
    State,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryHyper {
    pub m: usize,
    pub latent_kind: LatentKind,
    pub encoder_input: EncoderInput,
    pub encoder_hidden: Vec<usize>,
    pub encoder_activation: Activation,
    pub encoder_dropout: f64,
    /// Hidden widths of each mode field; empty means affine fields.
    pub field_hidden: Vec<usize>,
    pub field_activations: Vec<Activation>,
    /// Zero-augmentation dimensions, used only without an encoder.
    pub augment: usize,
    pub iterations: usize,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Weight of the squared finite-difference mismatch term.
    pub fd_weight: f64,
    pub grad_clip: Option<f64>,
    /// Train on at most this many steps from the start of each segment.
    pub max_steps: Option<usize>,
}

impl Default for RecoveryHyper {
    fn default() -> Self {
        Self {
            m: 3,
            latent_kind: LatentKind::Categorical,
            encoder_input: EncoderInput::Segment,
            encoder_hidden: vec![64, 64, 64],
            encoder_activation: Activation::Relu,
            encoder_dropout: 0.3,
            field_hidden: Vec::new(),
            field_activations: Vec::new(),
            augment: 0,
            iterations: 4000,
            lr_encoder: 5e-4,
            lr_decoder: 1e-2,
            batch_size: 64,
            seed: 0,
            loss: LossKind::Mse,
            fd_weight: 0.0,
            grad_clip: None,
            max_steps: None,
        }
    }
}

impl RecoveryHyper {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        if self.field_activations.len() != self.field_hidden.len() {
            return Err(Error::InvalidConfig(
                "field_activations needs one entry per hidden field layer".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.lr_encoder > 0.0 && self.lr_decoder > 0.0) {
            return Err(Error::InvalidConfig(
                "learning rates must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.encoder_dropout) {
            return Err(Error::InvalidConfig(
                "encoder_dropout must be in [0, 1)".into(),
            ));
        }
        if self.max_steps == Some(0) {
            return Err(Error::InvalidConfig("max_steps must be positive".into()));
        }
        if self.latent_kind == LatentKind::None && self.encoder_input == EncoderInput::State {
            return Err(Error::InvalidConfig(
                "a state-gated model needs an encoder".into(),
            ));
        }
        Ok(())
    }
}

/// Encoder plus a bank of mode-conditioned vector fields
/// `x' = sum_i z_i f_i(x)`.
///
/// Fields act on standardized states `u = (x - mean) / std` (plus `augment`
/// zero-initialized extra coordinates), so `x' = std * sum_i z_i f_i(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NhaRecoveryModel {
    pub m: usize,
    pub state_dim: usize,
    pub augment: usize,
    pub latent_kind: LatentKind,
    pub encoder_input: EncoderInput,
    pub encoder: Option<Mlp>,
    pub fields: Vec<Mlp>,
    pub feature_scaler: Scaler,
    pub state_scaler: Scaler,
    /// Maps raw latent indices to reported labels; identity until pruning.
    pub label_map: Vec<usize>,
    pub store: ParamStore,
}

impl NhaRecoveryModel {
    /// Builds a model whose scalers are fitted on `segments`.
    pub fn new<R: Rng + ?Sized>(
        hyper: &RecoveryHyper,
        segments: &[Subtrajectory],
        rng: &mut R,
    ) -> Result<Self> {
        hyper.validate()?;
        let first = segments
            .iter()
            .find(|s| !s.is_empty())
            .ok_or(Error::EmptyTrajectory(0))?;
        let d = first.state_dim();
        let states: Vec<&StateVec> = segments.iter().flat_map(|s| s.states.iter()).collect();
        if states.iter().any(|x| x.len() != d) {
            return Err(Error::ShapeMismatch(
                "segments disagree on state dimension".into(),
            ));
        }
        let state_scaler = Scaler::fit(&states);
        let feature_scaler = match hyper.encoder_input {
            EncoderInput::Segment => {
                let feats = segments
                    .iter()
                    .filter(|s| !s.is_empty())
                    .map(segment_features)
                    .collect::<Result<Vec<_>>>()?;
                Scaler::fit(&feats)
            }
            EncoderInput::State => Scaler::identity(d),
        };
        let mut store = ParamStore::new();
        let (encoder, n_fields, augment) = if hyper.latent_kind == LatentKind::None {
            (None, 1, hyper.augment)
        } else {
            let in_dim = match hyper.encoder_input {
                EncoderInput::Segment => feature_dim(d),
                EncoderInput::State => d,
            };
            let out = if hyper.latent_kind == LatentKind::GaussianReparam {
                2 * hyper.m
            } else {
                hyper.m
            };
            let mut dims = vec![in_dim];
            dims.extend(&hyper.encoder_hidden);
            dims.push(out);
            let spec =
                MlpSpec::new(&dims, hyper.encoder_activation).with_dropout(hyper.encoder_dropout);
            (
                Some(Mlp::new(spec, &mut store, "encoder", rng)?),
                hyper.m,
                0,
            )
        };
        let width = d + augment;
        let mut fields = Vec::with_capacity(n_fields);
        for i in 0..n_fields {
            let mut dims = vec![width];
            dims.extend(&hyper.field_hidden);
            dims.push(width);
            let spec = MlpSpec {
                layer_dims: dims,
                activations: hyper.field_activations.clone(),
                dropout: vec![0.0; hyper.field_hidden.len()],
            };
            fields.push(Mlp::new(spec, &mut store, &format!("field{i}"), rng)?);
        }
        Ok(Self {
            m: hyper.m,
            state_dim: d,
            augment,
            latent_kind: hyper.latent_kind,
            encoder_input: hyper.encoder_input,
            encoder,
            fields,
            feature_scaler,
            state_scaler,
            label_map: (0..hyper.m).collect(),
            store,
        })
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.encoder
            .as_ref()
            .map(Mlp::param_ids)
            .unwrap_or_default()
    }

    pub fn decoder_params(&self) -> Vec<ParamId> {
        self.fields.iter().flat_map(Mlp::param_ids).collect()
    }

    fn width(&self) -> usize {
        self.state_dim + self.augment
    }

    /// Standardized encoder input of a segment.
    pub fn segment_input(&self, seg: &Subtrajectory) -> Result<Vec<f64>> {
        Ok(self.feature_scaler.transform(&segment_features(seg)?))
    }

    /// Standardized, zero-augmented state.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut u = self.state_scaler.transform(x);
        u.resize(self.width(), 0.0);
        u
    }

    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        self.state_scaler.inverse(&u[..self.state_dim])
    }

    /// Evaluation-mode latent scores for a batch of encoder inputs:
    /// probabilities (categorical, softmax), means (Gaussian) or raw outputs
    /// (deterministic). Without an encoder every row is `[1]`.
    pub fn latent_scores(&self, inputs: &Matrix) -> Result<Matrix> {
        let Some(enc) = &self.encoder else {
            return Ok(Matrix::full(inputs.rows, 1, 1.0));
        };
        let mut out = enc.eval(&self.store, inputs)?;
        match self.latent_kind {
            LatentKind::Categorical | LatentKind::Softmax => {
                for r in 0..out.rows {
                    softmax_in_place(out.row_mut(r));
                }
            }
            LatentKind::GaussianReparam => {
                let mut mu = Matrix::zeros(out.rows, self.m);
                for r in 0..out.rows {
                    mu.row_mut(r).copy_from_slice(&out.row(r)[..self.m]);
                }
                out = mu;
            }
            LatentKind::Deterministic | LatentKind::None => {}
        }
        Ok(out)
    }

    /// Evaluation-mode mixing weights from latent scores: the arg-max one-hot
    /// for categorical models, the scores otherwise.
    pub fn eval_z(&self, scores: &[f64]) -> Vec<f64> {
        match self.latent_kind {
            LatentKind::Categorical => {
                let mut z = vec![0.0; scores.len()];
                z[argmax(scores)] = 1.0;
                z
            }
            _ => scores.to_vec(),
        }
    }

    /// Reported label for a row of latent scores.
    pub fn label_from_scores(&self, scores: &[f64]) -> usize {
        if self.encoder.is_none() {
            return 0;
        }
        self.label_map[argmax(scores)]
    }

    /// Field mixture in standardized coordinates.
    pub fn mixed_field(&self, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let x = Matrix::row_vector(u);
        if self.encoder.is_none() {
            return Ok(self.fields[0].eval(&self.store, &x)?.data);
        }
        if z.len() != self.fields.len() {
            return Err(Error::ShapeMismatch(format!(
                "latent has {} entries, model has {} fields",
                z.len(),
                self.fields.len()
            )));
        }
        let mut out = vec![0.0; u.len()];
        for (zi, f) in z.iter().zip(&self.fields) {
            if *zi == 0.0 {
                continue;
            }
            let fi = f.eval(&self.store, &x)?;
            out.iter_mut().zip(&fi.data).for_each(|(o, v)| *o += zi * v);
        }
        Ok(out)
    }

    /// Field `i` at state `x`, in original coordinates.
    pub fn field_at(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        let u = self.normalize(x);
        let f = self.fields[i].eval(&self.store, &Matrix::row_vector(&u))?;
        Ok(scale_back(
            &f.data[..self.state_dim],
            &self.state_scaler.std,
        ))
    }

    pub fn checkpoint(&self) -> RecoveryCheckpoint {
        RecoveryCheckpoint {
            m: self.m,
            state_dim: self.state_dim,
            augment: self.augment,
            latent_kind: self.latent_kind,
            encoder_input: self.encoder_input,
            encoder: self.encoder.as_ref().map(|e| e.checkpoint(&self.store)),
            fields: self
                .fields
                .iter()
                .map(|f| f.checkpoint(&self.store))
                .collect(),
            feature_scaler: self.feature_scaler.clone(),
            state_scaler: self.state_scaler.clone(),
            label_map: self.label_map.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &RecoveryCheckpoint) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = match &ckpt.encoder {
            Some(e) => Some(Mlp::from_checkpoint(e, &mut store)?),
            None => None,
        };
        let fields = ckpt
            .fields
            .iter()
            .map(|f| Mlp::from_checkpoint(f, &mut store))
            .collect::<Result<Vec<_>>>()?;
        if fields.is_empty() || ckpt.label_map.len() != ckpt.m {
            return Err(Error::InvalidConfig(
                "inconsistent recovery checkpoint".into(),
            ));
        }
        Ok(Self {
            m: ckpt.m,
            state_dim: ckpt.state_dim,
            augment: ckpt.augment,
            latent_kind: ckpt.latent_kind,
            encoder_input: ckpt.encoder_input,
            encoder,
            fields,
            feature_scaler: ckpt.feature_scaler.clone(),
            state_scaler: ckpt.state_scaler.clone(),
            label_map: ckpt.label_map.clone(),
            store,
        })
    }

    /// Differentiable latent for a batch of encoder inputs. Returns `None`
    /// for encoder-free models.
    pub(crate) fn encode(
        &self,
        g: &mut Graph,
        inputs: Var,
        train: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Option<Var>> {
        let Some(enc) = &self.encoder else {
            return Ok(None);
        };
        let out = enc.forward(g, &self.store, inputs, train, Some(&mut *rng))?;
        let z = match self.latent_kind {
            LatentKind::Categorical => {
                let p = g.softmax_rows(out);
                if train {
                    sample_straight_through(g, p, rng)?.0
                } else {
                    let pv = g.value(p);
                    let mut one_hot = Matrix::zeros(pv.rows, pv.cols);
                    for r in 0..pv.rows {
                        one_hot.set(r, argmax(pv.row(r)), 1.0);
                    }
                    g.straight_through(p, one_hot)
                }
            }
            LatentKind::Softmax => g.softmax_rows(out),
            LatentKind::Deterministic => out,
            LatentKind::GaussianReparam => {
                let mu = g.slice_cols(out, 0, self.m);
                if train {
                    let s = g.slice_cols(out, self.m, 2 * self.m);
                    let sp = g.softplus(s);
                    let sigma = g.add_scalar(sp, 1e-4);
                    gaussian_reparam(g, mu, sigma, rng)?
                } else {
                    mu
                }
            }
            LatentKind::None => unreachable!("no encoder"),
        };
        Ok(Some(z))
    }

    /// Differentiable field mixture `sum_i z_i f_i(u)` for a batch; `zcols`
    /// holds the `n x 1` columns of `z`.
    pub(crate) fn mix(&self, g: &mut Graph, u: Var, zcols: Option<&[Var]>) -> Result<Var> {
        let Some(zcols) = zcols else {
            return self.fields[0].forward(g, &self.store, u, false, None);
        };
        let mut acc: Option<Var> = None;
        for (f, &zc) in self.fields.iter().zip(zcols) {
            let fi = f.forward(g, &self.store, u, false, None)?;
            let term = g.mul_col(fi, zc);
            acc = Some(match acc {
                Some(a) => g.add(a, term),
                None => term,
            });
        }
        Ok(acc.expect("at least one field"))
    }
}

/// Serialized form of [`NhaRecoveryModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCheckpoint {
    pub m: usize,
    pub state_dim: usize,
    pub augment: usize,
    pub latent_kind: LatentKind,
    pub encoder_input: EncoderInput,
    pub encoder: Option<MlpCheckpoint>,
    pub fields: Vec<MlpCheckpoint>,
    pub feature_scaler: Scaler,
    pub state_scaler: Scaler,
    pub label_map: Vec<usize>,
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

fn scale_back(f: &[f64], std: &[f64]) -> Vec<f64> {
    f.iter().zip(std).map(|(v, s)| v * s).collect()
}

/// `sum_i z_i f_i(x)` in original coordinates. A one-hot `z` evaluates only
/// the selected field, so the result equals that field exactly.
pub fn decode_flow(model: &NhaRecoveryModel, z: &[f64], _t: f64, x: &[f64]) -> Result<StateVec> {
    if x.len() != model.state_dim {
        return Err(Error::ShapeMismatch(format!(
            "state has {} entries, model expects {}",
            x.len(),
            model.state_dim
        )));
    }
    let u = model.normalize(x);
    let f = model.mixed_field(z, &u)?;
    Ok(scale_back(&f[..model.state_dim], &model.state_scaler.std))
}

/// Fixed-step RK4 through the sample times `times`, one step per interval.
pub fn rk4_on_grid<F>(flow: &F, x0: &[f64], times: &[f64]) -> Result<Vec<StateVec>>
where
    F: Fn(f64, &[f64], &mut [f64]) + ?Sized,
{
    let mut out = Vec::with_capacity(times.len());
    if times.is_empty() {
        return Ok(out);
    }
    out.push(x0.to_vec());
    for w in times.windows(2) {
        let x = out.last().unwrap();
        let next = if w[1] > w[0] {
            step_rk4(flow, w[0], x, w[1] - w[0])?
        } else {
            x.clone()
        };
        out.push(next);
    }
    Ok(out)
}

/// Integrates the decoder from the segment's first state over its sample
/// times with RK4 on the data grid. `z = None` uses the encoder's
/// evaluation-mode choice; state-gated models pick `z` afresh at every step
/// and ignore the argument.
pub fn reconstruct_subtrajectory(
    model: &NhaRecoveryModel,
    seg: &Subtrajectory,
    z: Option<&[f64]>,
) -> Result<Vec<StateVec>> {
    if seg.is_empty() {
        return Err(Error::EmptyTrajectory(0));
    }
    let u0 = model.normalize(&seg.states[0]);
    let err_cell = std::cell::RefCell::new(None);
    let us = if model.encoder_input == EncoderInput::State {
        let mut us = vec![u0];
        for w in seg.times.windows(2) {
            let u = us.last().unwrap().clone();
            let scores = model.latent_scores(&Matrix::row_vector(&u[..model.state_dim]))?;
            let zk = model.eval_z(scores.row(0));
            let flow = |_t: f64, u: &[f64], du: &mut [f64]| match model.mixed_field(&zk, u) {
                Ok(f) => du.copy_from_slice(&f),
                Err(e) => {
                    du.iter_mut().for_each(|v| *v = f64::NAN);
                    err_cell.replace(Some(e));
                }
            };
            let next = if w[1] > w[0] {
                step_rk4(&flow, w[0], &u, w[1] - w[0])?
            } else {
                u
            };
            us.push(next);
        }
        us
    } else {
        let zv = match z {
            Some(z) => z.to_vec(),
            None => {
                let input = if model.encoder.is_some() {
                    model.segment_input(seg)?
                } else {
                    vec![0.0]
                };
                let scores = model.latent_scores(&Matrix::row_vector(&input))?;
                model.eval_z(scores.row(0))
            }
        };
        let flow = |_t: f64, u: &[f64], du: &mut [f64]| match model.mixed_field(&zv, u) {
            Ok(f) => du.copy_from_slice(&f),
            Err(e) => {
                du.iter_mut().for_each(|v| *v = f64::NAN);
                err_cell.replace(Some(e));
            }
        };
        let res = rk4_on_grid(&flow, &u0, &seg.times);
        if let Some(e) = err_cell.take() {
            return Err(e);
        }
        res?
    };
    if let Some(e) = err_cell.take() {
        return Err(e);
    }
    Ok(us.iter().map(|u| model.denormalize(u)).collect())
}

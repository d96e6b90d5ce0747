use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::v_measure;
use super::model::{
    argmax, reconstruct_subtrajectory, EncoderInput, LossKind, NhaRecoveryModel, RecoveryHyper,
};
use crate::hybrid::{StateVec, Subtrajectory};
use crate::nn::{AdamState, Graph, Matrix, ParamId, Var};
use crate::{Error, Result};

/// Training data for one segment, in model coordinates.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub input: Vec<f64>,
    /// Standardized states, zero-augmented to the field width.
    pub norm: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

pub(crate) fn prepare(
    model: &NhaRecoveryModel,
    seg: &Subtrajectory,
    max_steps: Option<usize>,
) -> Result<Prepared> {
    let keep = max_steps.map_or(seg.len(), |s| seg.len().min(s + 1));
    let input = match model.encoder_input {
        EncoderInput::Segment if model.encoder.is_some() => model.segment_input(seg)?,
        _ => Vec::new(),
    };
    Ok(Prepared {
        input,
        norm: seg.states[..keep]
            .iter()
            .map(|x| model.normalize(x))
            .collect(),
        times: seg.times[..keep].to_vec(),
    })
}

/// Field mixture evaluator for one graph. Affine fields are fused into a
/// single wide matmul followed by a block-sum.
struct Mixer {
    fused: Option<(Var, Var, Var)>,
}

impl Mixer {
    fn new(model: &NhaRecoveryModel, g: &mut Graph) -> Self {
        let affine = model.encoder.is_some() && model.fields.iter().all(|f| f.weights.len() == 1);
        if !affine {
            return Self { fused: None };
        }
        let ws: Vec<Var> = model
            .fields
            .iter()
            .map(|f| g.param(&model.store, f.weights[0]))
            .collect();
        let bs: Vec<Var> = model
            .fields
            .iter()
            .map(|f| g.param(&model.store, f.biases[0]))
            .collect();
        let w = g.concat_cols(&ws);
        let b = g.concat_cols(&bs);
        let width = model.state_dim + model.augment;
        let m = model.fields.len();
        let mut s = Matrix::zeros(m * width, width);
        for i in 0..m {
            for j in 0..width {
                s.set(i * width + j, j, 1.0);
            }
        }
        let s = g.input(s);
        Self {
            fused: Some((w, b, s)),
        }
    }

    /// Expands `z` (n x m) to the form `eval` expects.
    fn prepare_z(&self, model: &NhaRecoveryModel, g: &mut Graph, z: Var) -> Vec<Var> {
        match self.fused {
            Some(_) => {
                let width = model.state_dim + model.augment;
                let m = model.fields.len();
                let mut expand = Matrix::zeros(m, m * width);
                for i in 0..m {
                    for j in 0..width {
                        expand.set(i, i * width + j, 1.0);
                    }
                }
                let e = g.input(expand);
                vec![g.matmul(z, e)]
            }
            None => (0..model.fields.len())
                .map(|i| g.slice_cols(z, i, i + 1))
                .collect(),
        }
    }

    fn eval(
        &self,
        model: &NhaRecoveryModel,
        g: &mut Graph,
        u: Var,
        z: Option<&[Var]>,
    ) -> Result<Var> {
        match (self.fused, z) {
            (Some((w, b, s)), Some(z)) => {
                let h = g.matmul(u, w);
                let h = g.add_row(h, b);
                let h = g.mul(h, z[0]);
                Ok(g.matmul(h, s))
            }
            _ => model.mix(g, u, z),
        }
    }
}

fn column(values: Vec<f64>) -> Matrix {
    let n = values.len();
    Matrix::from_vec(n, 1, values).expect("column length")
}

/// Reconstruction loss of a batch with RK4 unrolled on the data grid.
/// Returns the loss node; each segment contributes the mean over its
/// predicted samples and coordinates, and segments are averaged.
pub(crate) fn batch_loss(
    model: &NhaRecoveryModel,
    g: &mut Graph,
    items: &[&Prepared],
    hyper: &RecoveryHyper,
    train: bool,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    let items: Vec<&Prepared> = items
        .iter()
        .copied()
        .filter(|p| p.times.len() >= 2)
        .collect();
    if items.is_empty() {
        return Err(Error::EmptyTrajectory(1));
    }
    let n = items.len();
    let d = model.state_dim;
    let width = d + model.augment;
    let steps = items.iter().map(|p| p.times.len() - 1).max().unwrap();
    let mixer = Mixer::new(model, g);

    let segment_z = if model.encoder_input == EncoderInput::Segment && model.encoder.is_some() {
        let rows: Vec<Vec<f64>> = items.iter().map(|p| p.input.clone()).collect();
        let x = g.input(Matrix::from_rows(&rows)?);
        let z = model.encode(g, x, train, rng)?.expect("encoder present");
        Some(mixer.prepare_z(model, g, z))
    } else {
        None
    };

    let u0: Vec<Vec<f64>> = items.iter().map(|p| p.norm[0].clone()).collect();
    let mut u = g.input(Matrix::from_rows(&u0)?);
    let mut loss: Option<Var> = None;
    let mut prev_target = Matrix::from_rows(&u0)?;
    for k in 0..steps {
        let mut dts = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut target = Matrix::zeros(n, width);
        for (r, p) in items.iter().enumerate() {
            let l = p.times.len();
            if k + 1 < l {
                dts.push(p.times[k + 1] - p.times[k]);
                weights.push(1.0 / (n as f64 * (l - 1) as f64 * d as f64));
                target.row_mut(r).copy_from_slice(&p.norm[k + 1]);
            } else {
                dts.push(0.0);
                weights.push(0.0);
                target.row_mut(r).copy_from_slice(prev_target.row(r));
            }
        }
        let zk = match &segment_z {
            Some(z) => Some(z.clone()),
            None if model.encoder.is_some() => {
                let x = if model.augment > 0 {
                    g.slice_cols(u, 0, d)
                } else {
                    u
                };
                let z = model.encode(g, x, train, rng)?.expect("encoder present");
                Some(mixer.prepare_z(model, g, z))
            }
            None => None,
        };
        let dt = g.input(column(dts));
        let half = g.scale(dt, 0.5);
        let sixth = g.scale(dt, 1.0 / 6.0);
        let k1 = mixer.eval(model, g, u, zk.as_deref())?;
        let s = g.mul_col(k1, half);
        let u2 = g.add(u, s);
        let k2 = mixer.eval(model, g, u2, zk.as_deref())?;
        let s = g.mul_col(k2, half);
        let u3 = g.add(u, s);
        let k3 = mixer.eval(model, g, u3, zk.as_deref())?;
        let s = g.mul_col(k3, dt);
        let u4 = g.add(u, s);
        let k4 = mixer.eval(model, g, u4, zk.as_deref())?;
        let k23 = g.add(k2, k3);
        let k23 = g.scale(k23, 2.0);
        let acc = g.add(k1, k4);
        let acc = g.add(acc, k23);
        let incr = g.mul_col(acc, sixth);
        let next = g.add(u, incr);

        let w = g.input(column(weights));
        let pred = if model.augment > 0 {
            g.slice_cols(next, 0, d)
        } else {
            next
        };
        let tgt = Matrix::from_rows(
            &(0..n)
                .map(|r| target.row(r)[..d].to_vec())
                .collect::<Vec<_>>(),
        )?;
        let tgt_var = g.input(tgt.clone());
        let diff = g.sub(pred, tgt_var);
        let err = match hyper.loss {
            LossKind::Mse => g.square(diff),
            LossKind::L1 => g.abs(diff),
        };
        let weighted = g.mul_col(err, w);
        let mut term = g.sum(weighted);
        if hyper.fd_weight > 0.0 {
            let prev = if model.augment > 0 {
                g.slice_cols(u, 0, d)
            } else {
                u
            };
            let step_pred = g.sub(pred, prev);
            let prev_rows: Vec<Vec<f64>> =
                (0..n).map(|r| prev_target.row(r)[..d].to_vec()).collect();
            let step_true = tgt.zip_map(&Matrix::from_rows(&prev_rows)?, |a, b| a - b);
            let step_true = g.input(step_true);
            let fd = g.sub(step_pred, step_true);
            let fd = g.square(fd);
            let fd = g.mul_col(fd, w);
            let fd = g.sum(fd);
            let fd = g.scale(fd, hyper.fd_weight);
            term = g.add(term, fd);
        }
        loss = Some(match loss {
            Some(l) => g.add(l, term),
            None => term,
        });
        prev_target = target;
        u = next;
    }
    Ok(loss.expect("at least one step"))
}

/// Outcome of [`train_recovery`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Recovered label per training segment.
    pub modes: Vec<usize>,
    pub losses: Vec<f64>,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub test_mse: Option<f64>,
    /// Against the segments' `true_mode`, when every segment has one.
    pub v_measure: Option<f64>,
    /// Number of training segments per recovered label.
    pub cluster_sizes: BTreeMap<usize, usize>,
}

impl RecoveryReport {
    /// Summarizes `model` on `segments`.
    pub fn build(
        model: &NhaRecoveryModel,
        segments: &[Subtrajectory],
        losses: Vec<f64>,
    ) -> Result<Self> {
        let modes = predict_labels(model, segments)?;
        let mut cluster_sizes = BTreeMap::new();
        for &m in &modes {
            *cluster_sizes.entry(m).or_insert(0) += 1;
        }
        let truth: Option<Vec<usize>> = segments.iter().map(|s| s.true_mode.map(|m| m.0)).collect();
        let v_measure = match truth {
            Some(t) if !t.is_empty() => Some(v_measure(&t, &modes)?),
            _ => None,
        };
        Ok(Self {
            modes,
            losses,
            train_mse: evaluate_mse(model, segments)?,
            val_mse: None,
            test_mse: None,
            v_measure,
            cluster_sizes,
        })
    }

    /// Mean loss over the last `window` iterations.
    pub fn smoothed_final_loss(&self, window: usize) -> f64 {
        smoothed(&self.losses[self.losses.len().saturating_sub(window)..])
    }

    /// Mean loss over the first `window` iterations.
    pub fn smoothed_initial_loss(&self, window: usize) -> f64 {
        smoothed(&self.losses[..window.min(self.losses.len())])
    }
}

fn smoothed(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Trains `model` on `segments` with Adam (separate learning rates for the
/// encoder and the fields), differentiating through the unrolled RK4 steps
/// and, for categorical latents, through the straight-through sample.
pub fn train_recovery(
    model: &mut NhaRecoveryModel,
    segments: &[Subtrajectory],
    hyper: &RecoveryHyper,
) -> Result<RecoveryReport> {
    hyper.validate()?;
    let prepared = segments
        .iter()
        .filter(|s| s.len() >= 2)
        .map(|s| prepare(model, s, hyper.max_steps))
        .collect::<Result<Vec<_>>>()?;
    if prepared.is_empty() {
        return Err(Error::EmptyTrajectory(1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let enc_ids = model.encoder_params();
    let dec_ids = model.decoder_params();
    let all_ids: Vec<ParamId> = enc_ids.iter().chain(&dec_ids).copied().collect();
    let mut enc_opt = AdamState::new(&model.store, enc_ids, hyper.lr_encoder);
    let mut dec_opt = AdamState::new(&model.store, dec_ids, hyper.lr_decoder);
    model.store.zero_grad();
    let mut losses = Vec::with_capacity(hyper.iterations);
    for iteration in 0..hyper.iterations {
        let batch: Vec<&Prepared> = if prepared.len() <= hyper.batch_size {
            prepared.iter().collect()
        } else {
            sample_indices(&mut rng, prepared.len(), hyper.batch_size)
                .into_iter()
                .map(|i| &prepared[i])
                .collect()
        };
        let mut g = Graph::new();
        // non-finite encoder logits surface as a bad distribution before the loss does
        let loss =
            batch_loss(model, &mut g, &batch, hyper, true, &mut rng).map_err(|e| match e {
                Error::InvalidDistribution(_) => Error::DivergedLoss { iteration },
                e => e,
            })?;
        let value = g.value(loss).scalar();
        if !value.is_finite() {
            return Err(Error::DivergedLoss { iteration });
        }
        losses.push(value);
        g.backward(loss).accumulate(&g, &mut model.store);
        if let Some(max) = hyper.grad_clip {
            model.store.clip_grad_norm(&all_ids, max);
        }
        enc_opt
            .step(&mut model.store)
            .and_then(|_| dec_opt.step(&mut model.store))
            .map_err(|_| Error::DivergedLoss { iteration })?;
    }
    RecoveryReport::build(model, segments, losses)
}

/// The training objective over `segments` on a fresh tape, with the encoder
/// in evaluation mode (no dropout, deterministic latent).
pub fn reconstruction_loss_tape(
    model: &NhaRecoveryModel,
    g: &mut Graph,
    segments: &[Subtrajectory],
    hyper: &RecoveryHyper,
) -> Result<Var> {
    let prepared = segments
        .iter()
        .map(|s| prepare(model, s, hyper.max_steps))
        .collect::<Result<Vec<_>>>()?;
    let items: Vec<&Prepared> = prepared.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    batch_loss(model, g, &items, hyper, false, &mut rng)
}

/// Per-segment mean squared error in standardized coordinates over the
/// predicted samples; `None` for single-sample segments.
pub fn segment_mse(model: &NhaRecoveryModel, seg: &Subtrajectory) -> Result<Option<f64>> {
    if seg.len() < 2 {
        return Ok(None);
    }
    let pred = reconstruct_subtrajectory(model, seg, None)?;
    let d = model.state_dim;
    let mut total = 0.0;
    for (p, x) in pred.iter().zip(&seg.states).skip(1) {
        let (up, ux) = (model.normalize(p), model.normalize(x));
        total += up[..d]
            .iter()
            .zip(&ux[..d])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
    }
    Ok(Some(total / ((seg.len() - 1) * d) as f64))
}

/// Mean of [`segment_mse`] over segments with at least two samples (0 when
/// there are none).
pub fn evaluate_mse(model: &NhaRecoveryModel, segments: &[Subtrajectory]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for seg in segments {
        if let Some(v) = segment_mse(model, seg)? {
            total += v;
            count += 1;
        }
    }
    Ok(if count == 0 {
        0.0
    } else {
        total / count as f64
    })
}

/// Labels for individual states of a state-gated model.
pub fn predict_state_labels(model: &NhaRecoveryModel, states: &[StateVec]) -> Result<Vec<usize>> {
    if states.is_empty() {
        return Ok(Vec::new());
    }
    let rows: Vec<Vec<f64>> = states
        .iter()
        .map(|x| model.normalize(x)[..model.state_dim].to_vec())
        .collect();
    let scores = model.latent_scores(&Matrix::from_rows(&rows)?)?;
    Ok((0..scores.rows)
        .map(|r| model.label_from_scores(scores.row(r)))
        .collect())
}

/// Label per segment: arg-max of the evaluation-mode encoder output for
/// segment encoders, majority of per-sample labels for state-gated ones.
pub fn predict_labels(model: &NhaRecoveryModel, segments: &[Subtrajectory]) -> Result<Vec<usize>> {
    if model.encoder.is_none() {
        return Ok(vec![0; segments.len()]);
    }
    match model.encoder_input {
        EncoderInput::Segment => {
            if segments.is_empty() {
                return Ok(Vec::new());
            }
            let rows = segments
                .iter()
                .map(|s| model.segment_input(s))
                .collect::<Result<Vec<_>>>()?;
            let scores = model.latent_scores(&Matrix::from_rows(&rows)?)?;
            Ok((0..scores.rows)
                .map(|r| model.label_from_scores(scores.row(r)))
                .collect())
        }
        EncoderInput::State => segments
            .iter()
            .map(|s| {
                let labels = predict_state_labels(model, &s.states)?;
                let mut counts = vec![0usize; model.m];
                labels.iter().for_each(|&l| counts[l] += 1);
                Ok(argmax(
                    &counts.iter().map(|&c| c as f64).collect::<Vec<_>>(),
                ))
            })
            .collect(),
    }
}

/// Writes predicted labels into `recovered_mode`.
pub fn label_segments(model: &NhaRecoveryModel, segments: &mut [Subtrajectory]) -> Result<()> {
    let labels = predict_labels(model, segments)?;
    for (s, l) in segments.iter_mut().zip(labels) {
        s.recovered_mode = Some(crate::hybrid::ModeId(l));
    }
    Ok(())
}

/// Cuts segments into consecutive windows of `len` samples, advancing by
/// `stride`. Shorter leftovers are dropped.
pub fn windows(segments: &[Subtrajectory], len: usize, stride: usize) -> Vec<Subtrajectory> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for seg in segments {
        let mut start = 0;
        while len > 0 && start + len <= seg.len() {
            out.push(Subtrajectory {
                parent_id: seg.parent_id.clone(),
                start_idx: seg.start_idx + start,
                end_idx: seg.start_idx + start + len,
                times: seg.times[start..start + len].to_vec(),
                states: seg.states[start..start + len].to_vec(),
                recovered_mode: seg.recovered_mode,
                true_mode: seg.true_mode,
            });
            start += stride;
        }
    }
    out
}

/// Distance from the evaluation-mode mixture field to the nearest single
/// field, in original coordinates.
pub fn mixture_deviation(model: &NhaRecoveryModel, x: &[f64]) -> Result<f64> {
    let u = model.normalize(x);
    let scores = model.latent_scores(&Matrix::row_vector(&u[..model.state_dim]))?;
    let z = model.eval_z(scores.row(0));
    let mixed = super::model::decode_flow(model, &z, 0.0, x)?;
    let mut best = f64::INFINITY;
    for i in 0..model.fields.len() {
        let f = model.field_at(i, x)?;
        let dist = mixed
            .iter()
            .zip(&f)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        best = best.min(dist);
    }
    Ok(best)
}

/// Fraction of `states` where the soft model's mixture field is more than
/// ten times further from each of its own fields than the categorical
/// model's is. Because a categorical mixture always equals one field, its
/// deviation is floored at 1e-3 of the soft model's RMS field magnitude.
pub fn mixing_fraction(
    soft: &NhaRecoveryModel,
    categorical: &NhaRecoveryModel,
    states: &[StateVec],
) -> Result<f64> {
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut sq = 0.0;
    for x in states {
        let u = soft.normalize(x);
        let scores = soft.latent_scores(&Matrix::row_vector(&u[..soft.state_dim]))?;
        let f = super::model::decode_flow(soft, &soft.eval_z(scores.row(0)), 0.0, x)?;
        sq += f.iter().map(|v| v * v).sum::<f64>();
    }
    let floor = 1e-3 * (sq / states.len() as f64).sqrt();
    let mut mixing = 0;
    for x in states {
        let d_soft = mixture_deviation(soft, x)?;
        let d_cat = mixture_deviation(categorical, x)?;
        if d_soft > 10.0 * d_cat.max(floor) {
            mixing += 1;
        }
    }
    Ok(mixing as f64 / states.len() as f64)
}

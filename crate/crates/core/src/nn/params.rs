use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamId(pub usize);

/// A trainable `rows x cols` tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.values.clone(),
        }
    }

    pub fn add_grad(&mut self, g: &[f64]) {
        if self.grad.len() != self.values.len() {
            self.grad = vec![0.0; self.values.len()];
        }
        for (a, b) in self.grad.iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.clear();
        self.grad.resize(self.values.len(), 0.0);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let n = value.len();
        self.tensors.push(ParamTensor {
            name: name.into(),
            rows: value.rows,
            cols: value.cols,
            values: value.data,
            grad: vec![0.0; n],
        });
        ParamId(self.tensors.len() - 1)
    }

    /// Adds a tensor drawn from `U(-bound, bound)`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| {
                if bound > 0.0 {
                    rng.random_range(-bound..bound)
                } else {
                    0.0
                }
            })
            .collect();
        self.add(name, Matrix { rows, cols, data })
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(ParamTensor::zero_grad);
    }

    /// Rescales the gradients of `ids` so their joint norm is at most
    /// `max_norm`; returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, ids: &[ParamId], max_norm: f64) -> f64 {
        let norm = ids
            .iter()
            .flat_map(|&id| self.get(id).grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm > max_norm {
            let k = max_norm / norm;
            for &id in ids {
                self.get_mut(id).grad.iter_mut().for_each(|g| *g *= k);
            }
        }
        norm
    }

    /// Restores gradient buffers after deserialization.
    pub fn ensure_grads(&mut self) {
        for t in &mut self.tensors {
            if t.grad.len() != t.values.len() {
                t.zero_grad();
            }
        }
    }
}

/// Adam with bias correction over a fixed group of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub params: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, params: Vec<ParamId>, lr: f64) -> Self {
        let zeros = |id: &ParamId| vec![0.0; store.get(*id).values.len()];
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            params,
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// Fails without touching the parameters if a gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let finite = self
            .params
            .iter()
            .all(|&id| store.get(id).grad.iter().all(|g| g.is_finite()));
        if !finite {
            return Err(Error::DivergedLoss {
                iteration: self.step as usize,
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powf(self.step as f64);
        let bc2 = 1.0 - self.beta2.powf(self.step as f64);
        for (k, &id) in self.params.iter().enumerate() {
            let p = store.get_mut(id);
            if p.grad.len() != p.values.len() {
                p.zero_grad();
            }
            for i in 0..p.values.len() {
                let g = p.grad[i];
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                p.values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("x", Matrix::full(1, 1, x));
        (store, id)
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut store, id) = scalar_store(1.5);
        let mut adam = AdamState::new(&store, vec![id], 0.1);
        for _ in 0..10 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.get(id).values, vec![1.5]);
    }

    #[test]
    fn first_step_is_bounded_by_lr() {
        let (mut store, id) = scalar_store(0.0);
        let mut adam = AdamState::new(&store, vec![id], 0.01);
        store.get_mut(id).add_grad(&[4.0]);
        adam.step(&mut store).unwrap();
        let moved = store.get(id).values[0];
        assert!(moved < 0.0 && moved.abs() <= 0.01);
        assert!((moved + 0.01).abs() < 1e-8);
        assert_eq!(store.get(id).grad, vec![0.0]);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let (mut store, id) = scalar_store(0.0);
        let mut adam = AdamState::new(&store, vec![id], 0.01);
        store.get_mut(id).add_grad(&[f64::NAN]);
        assert!(matches!(
            adam.step(&mut store),
            Err(Error::DivergedLoss { .. })
        ));
        assert_eq!(store.get(id).values, vec![0.0]);
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut store = ParamStore::new();
        let id = store.add("v", Matrix::zeros(1, 2));
        store.get_mut(id).add_grad(&[3.0, 4.0]);
        assert_eq!(store.clip_grad_norm(&[id], 1.0), 5.0);
        let g = &store.get(id).grad;
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }
}

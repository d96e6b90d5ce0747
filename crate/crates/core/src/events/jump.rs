use rand::Rng;

use crate::hybrid::StateVec;
use crate::nn::{Activation, Graph, Matrix, Mlp, MlpSpec, ParamStore, Var};
use crate::recovery::Scaler;
use crate::Result;

/// Residual jump map `x+ = x + std * MLP((x - mean) / std)`. The output
/// layer starts at zero, so a fresh net is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpNet {
    pub mlp: Mlp,
    pub store: ParamStore,
    pub scaler: Scaler,
}

impl JumpNet {
    pub fn new<R: Rng + ?Sized>(scaler: Scaler, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let d = scaler.dim();
        let mut dims = vec![d];
        dims.extend(hidden);
        dims.push(d);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            MlpSpec::new(&dims, Activation::Softplus),
            &mut store,
            "jump",
            rng,
        )?;
        mlp.zero_output_layer(&mut store);
        Ok(Self { mlp, store, scaler })
    }

    pub fn apply(&self, x: &[f64]) -> Result<StateVec> {
        let u = self.scaler.transform(x);
        let delta = self.mlp.eval(&self.store, &Matrix::row_vector(&u))?;
        Ok(x.iter()
            .zip(&delta.data)
            .zip(&self.scaler.std)
            .map(|((v, dv), s)| v + s * dv)
            .collect())
    }

    /// Differentiable prediction in standardized coordinates for a batch of
    /// standardized inputs.
    pub(crate) fn forward_normalized(&self, g: &mut Graph, u: Var) -> Result<Var> {
        let delta = self.mlp.forward(g, &self.store, u, false, None)?;
        Ok(g.add(u, delta))
    }
}

//! Reverse-mode differentiable building blocks: dense matrices, a tape,
//! MLPs with dropout, straight-through categorical sampling, Gaussian
//! reparametrization and Adam.

mod gradcheck;
mod graph;
mod latent;
mod matrix;
mod mlp;
mod params;

pub use gradcheck::{gradcheck, GradcheckReport};
pub use graph::{normal_log_sf, sigmoid, softplus, Gradients, Graph, Unary, Var};
pub use latent::{
    check_probs, gaussian_reparam, sample_category, sample_straight_through,
    straight_through_sample, CategoricalLatent,
};
pub use matrix::Matrix;
pub use mlp::{mlp_forward, Activation, Mlp, MlpCheckpoint, MlpSpec};
pub use params::{AdamState, ParamId, ParamStore, ParamTensor};

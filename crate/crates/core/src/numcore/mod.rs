//! Tensor math, reverse-mode autodiff, Adam, Gumbel-softmax and checkpoint IO.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod nn;
pub mod prng;
mod scalar;
mod stochastic;
mod tensor;
mod transformer;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, Manifest, TensorEntry, FORMAT_VERSION};
pub use graph::{argmax, AttentionSpec, Gradients, Graph, Var};
pub use nn::{gru_cell, GruCell, GruVars, Init, LayerNorm, Linear};
pub use prng::Prng;
pub use scalar::{DType, Scalar};
pub use stochastic::{gumbel_softmax, GUMBEL_EPS};
pub use tensor::{ParamSet, Tensor};
pub use transformer::{TransformerBlock, TRANSFORMER_INIT_STD};

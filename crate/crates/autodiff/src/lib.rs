//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a dynamic tape: build it during the forward pass, call
//! [`Graph::backward`] on a scalar, read gradients from [`Gradients`], then
//! drop it. Only the operators needed by the CTR and contrastive models are
//! provided.

mod error;
pub mod gradcheck;
mod graph;
mod tensor;

pub use error::{AutodiffError, Result};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    graph::stable_sigmoid(x)
}

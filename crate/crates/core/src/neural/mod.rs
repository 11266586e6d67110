//! A small numerical kernel for the fixed architectures used here: dense
//! layers, a GRU cell, a ternary quantizer with a straight-through gradient,
//! Adam, gradient clipping, finite-difference gradient checks and a binary
//! checkpoint format. All arithmetic is in `f64`.

mod activation;
mod checkpoint;
mod dense;
mod gradcheck;
mod gru;
mod optim;
mod tensor;

use thiserror::Error;

pub use activation::{
    ternary_tanh_forward, ternary_tanh_grad, ternary_tanh_smooth, Activation, Mode,
};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use dense::{Dense, DenseCache, Mlp, MlpCache};
pub use gradcheck::{grad_check, relative_error, Differentiable};
pub(crate) use gradcheck::{probe, probe_grad};
pub use gru::{GruCache, GruCell};
pub use optim::{clip_grad_norm, global_norm, Adam};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuralError {
    #[error("shape mismatch in {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), NeuralError> {
    if expected == found {
        Ok(())
    } else {
        Err(NeuralError::ShapeMismatch {
            what,
            expected: vec![expected],
            found: vec![found],
        })
    }
}

/// A model with an ordered list of parameter tensors. Gradients are always
/// reported in the same order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn zero_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Adds `src` into `dst` elementwise, tensor by tensor.
pub fn accumulate(dst: &mut [Tensor], src: &[Tensor]) {
    for (d, s) in dst.iter_mut().zip(src) {
        d.add_assign(s);
    }
}

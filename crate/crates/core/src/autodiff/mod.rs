//! A small reverse-mode autodiff engine over dense f32 tensors.
//!
//! Only the operations the encoder, decoder and losses need are provided.
//! Model code is generic over [`Graph`], so the same function runs eagerly
//! for inference or on a [`Tape`] for training.

mod checkpoint;
mod graph;
mod ops;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, ParamStore};
pub use graph::{Eager, Graph};
pub use ops::{
    affine, affine_backward, bce_with_logits, binary, binary_backward, conv2d, conv2d_backward,
    conv2d_backward_input, conv_transpose2d, conv_transpose2d_backward, fast_sigmoid, gather,
    gather_backward, mix, sigmoid_scalar, softmax, softmax_cross_entropy, spike, sum_pool,
    sum_pool_backward, surrogate_backward, surrogate_derivative, unary, unary_backward,
    AffineGrads, Binary, ConvGeometry, ConvGrads, Unary,
};
pub use optim::{adam_step, Adam, AdamConfig};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Index of a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape was already differentiated; reset it before recording again")]
    TapeConsumed,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl AutodiffError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        AutodiffError::Shape {
            op,
            detail: detail.into(),
        }
    }
}

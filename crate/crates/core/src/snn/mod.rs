//! Convolutional spiking encoder built from discretised LIF neurons.
//!
//! Each bin of a [`FrameSequence`](crate::events::FrameSequence) is one
//! simulation step. After the last step the membrane potential of the dense
//! readout layer is mapped to the posterior mean and log-variance.

mod encoder;
mod lif;
mod quant;

pub use encoder::{
    EncoderOutput, EncoderParams, EncoderSpec, EncoderState, LayerKind, LayerSpec, SpikingEncoder,
    Stage, LOGVAR_CLAMP,
};
pub use lif::{lif_step, LayerState, LifParams, Synapse};
pub use quant::{quant_encode, quantize_encoder, QuantLayer, QuantOutput, QuantScheme, QuantizedEncoder};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error, PartialEq)]
pub enum SnnError {
    #[error("invalid LIF parameters: {0}")]
    InvalidParams(String),
    #[error("invalid encoder layout: {0}")]
    InvalidSpec(String),
    #[error("input frames are {got:?}, encoder expects {expected:?}")]
    InputShape { expected: [usize; 3], got: [usize; 3] },
    #[error("missing or mis-shaped parameter {0:?}")]
    Param(String),
    #[error("invalid quantization scheme: {0}")]
    Quant(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

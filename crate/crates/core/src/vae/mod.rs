//! The guided VAE: decoder, classifiers, losses and the training loop.

mod config;
mod data;
mod losses;
mod model;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::events::EventError;
use crate::snn::SnnError;

pub use config::{EncoderKind, LabelStream, TrainConfig};
pub use data::{
    prepare, prepare_all, presence, write_synthetic, Crop, Dataset, LabeledSample, Sample, SynthOptions,
    MANIFEST,
};
pub use losses::{
    excitation_loss, inhibition_loss, kl_loss, recon_loss, reparameterize, standard_normal,
    InhibitionPhase,
};
pub use model::{Decoder, GuidedPair, Model, Prefix};
pub use train::{
    eval_samples, load_model, save_model, train, EpochMetrics, LossBundle, TrainOutcome, Trainer, CHECKPOINT,
    CONFIG, METRICS,
};

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("label {label} is out of range for stream {stream:?} with {classes} classes")]
    Label {
        stream: String,
        label: usize,
        classes: usize,
    },
    #[error(transparent)]
    Events(#[from] EventError),
    #[error(transparent)]
    Snn(#[from] SnnError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

//! Tools over a trained model's latent space: accuracy, embedding export,
//! cluster separation, pseudo-labelling, traversals and linear probes.

mod cluster;
mod probe;
mod table;
mod traverse;

use std::path::PathBuf;

use thiserror::Error;

use crate::vae::VaeError;

pub use cluster::{fit_centroids, pseudo_label, separation_score, CentroidModel, DimBlock, PseudoLabel};
pub use probe::{probe_accuracy, ProbeKind, ProbeOptions};
pub use table::{eval_excitation_accuracy, export_latents, EmbeddingRow, EmbeddingTable};
pub use traverse::{
    latent_traversal, mean_step_change, read_pfm2, write_pfm2, TRAVERSAL_RANGE,
};

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("{0}")]
    Degenerate(String),
    #[error("{0}")]
    Shape(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Vae(#[from] VaeError),
}

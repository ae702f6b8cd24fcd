//! Hybrid guided variational autoencoder for event-camera streams.
//!
//! A convolutional spiking encoder built from discretised LIF neurons maps
//! binned event sequences to a latent space, part of which is guided towards
//! class labels while the rest is adversarially scrubbed of them. A
//! conventional transposed-convolution decoder reconstructs time surfaces.

pub mod autodiff;
pub mod events;
pub mod latent;
pub mod snn;
pub mod vae;

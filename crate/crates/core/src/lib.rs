//! Conditional latent-space variational autoencoders and the tooling around
//! them: a plain autoencoder and single-prior VAE baseline, clustering of the
//! learned 2-D embeddings, latent-space anomaly detectors and the
//! excess-mass / mass-volume evaluation of those detectors.

pub mod anomaly;
pub mod autoencoder;
pub mod clustering;
pub mod clvae;
pub mod datasets;
pub mod emmv;
pub mod error;
pub mod latent;
pub mod metrics;
pub mod nn;
pub mod numerics;
pub mod vae;

pub use error::{Error, Result};
pub use latent::{LatentSet, Provenance};

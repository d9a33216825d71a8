//! Synthetic multi-label record generation with an autoencoder-decoded GAN.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense matrices, activations, batch normalization, Adam, seeded sampling.
//! - [`data`]: record datasets, JSONL ingestion, ground-truth corpora and checkpoints.
//! - [`medgan`]: autoencoder pretraining, the shortcut generator, the minibatch-averaging
//!   discriminator and the adversarial training loop.
//! - [`baselines`]: random noise, independent sampling (Bernoulli / KDE) and a VAE.
//! - [`eval`]: dimension-wise statistics, histograms and dimension-wise prediction.
//! - [`privacy`]: presence and attribute disclosure attacks.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod medgan;
pub mod numerics;
pub mod privacy;

pub use error::{Error, Result};

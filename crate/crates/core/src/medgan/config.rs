use serde::{Deserialize, Serialize};

use crate::data::DataKind;
use crate::error::{Error, Result};

/// Hyperparameters for autoencoder pretraining and adversarial training.
///
/// Defaults follow the reference setup: 128-dimensional embedding and prior,
/// two generator layers, a 256→128 discriminator, minibatches of 1000,
/// two discriminator updates per iteration and Adam at 0.001.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MedganConfig {
    pub kind: DataKind,
    /// Width of the autoencoder code `h`.
    pub embed_dim: usize,
    /// Width of the random prior `z`; equal to `embed_dim` for shortcuts.
    pub prior_dim: usize,
    /// Number of shortcut layers in the generator; the last one uses the
    /// output activation.
    pub generator_layers: usize,
    pub discriminator_dims: Vec<usize>,
    /// GAN minibatch size `m`.
    pub batch_size: usize,
    /// Discriminator updates per iteration (`k`).
    pub discriminator_steps: usize,
    pub learning_rate: f64,
    pub ae_epochs: usize,
    pub ae_batch_size: usize,
    pub gan_epochs: usize,
    pub minibatch_averaging: bool,
    pub pretrain_autoencoder: bool,
    /// Round decoded samples before the discriminator update.
    pub rounding_for_d: bool,
    pub seed: u64,
}

impl Default for MedganConfig {
    fn default() -> Self {
        MedganConfig {
            kind: DataKind::Binary,
            embed_dim: 128,
            prior_dim: 128,
            generator_layers: 2,
            discriminator_dims: vec![256, 128],
            batch_size: 1000,
            discriminator_steps: 2,
            learning_rate: 0.001,
            ae_epochs: 100,
            ae_batch_size: 100,
            gan_epochs: 1000,
            minibatch_averaging: true,
            pretrain_autoencoder: true,
            rounding_for_d: false,
            seed: 0,
        }
    }
}

impl MedganConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("prior_dim", self.prior_dim),
            ("generator_layers", self.generator_layers),
            ("batch_size", self.batch_size),
            ("discriminator_steps", self.discriminator_steps),
            ("ae_batch_size", self.ae_batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.discriminator_dims.contains(&0) {
            return Err(Error::invalid(
                "discriminator layer widths must be positive",
            ));
        }
        if self.prior_dim != self.embed_dim {
            return Err(Error::invalid(format!(
                "shortcut connections need prior_dim ({}) == embed_dim ({})",
                self.prior_dim, self.embed_dim
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }
}

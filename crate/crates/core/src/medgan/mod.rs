//! The adversarial model: an autoencoder whose decoder maps generator
//! outputs into record space, a generator of batch-normalized shortcut
//! layers, and a discriminator that optionally sees the minibatch average.

mod autoencoder;
mod config;
mod discriminator;
mod generator;
mod train;

pub use autoencoder::{
    decoder_activation, encoder_activation, pretrain_autoencoder, reconstruction_loss,
    reconstruction_loss_grad, Autoencoder, AutoencoderGrads, LOG_FLOOR,
};
pub use config::MedganConfig;
pub use discriminator::{
    batch_average, discriminator_objective, discriminator_objective_and_grads, generator_objective,
    generator_objective_and_sample_grad, Discriminator, DiscriminatorAdam, DiscriminatorCache,
};
pub use generator::{
    generator_forward, Generator, GeneratorAdam, GeneratorCache, GeneratorGrads, GeneratorLayer,
};
pub use train::{
    discretize, generate, generator_step_grads, load_checkpoint, save_checkpoint, train,
    write_loss_trace, EpochLoss, MedganModel, MODEL_NAME,
};

pub(crate) use train::{push_dense, read_dense};

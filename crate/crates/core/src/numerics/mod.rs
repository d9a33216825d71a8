//! Numeric substrate: matrices, activations, batch normalization, Adam and
//! seeded sampling. Gradients are wired by hand in the model modules.

mod activation;
mod adam;
mod batchnorm;
mod dense;
mod gradcheck;
mod matrix;
mod rng;

pub use activation::{activation, activation_grad, Activation};
pub use adam::{AdamState, Direction};
pub use batchnorm::{BatchNormCache, BatchNormState, BnMode, BN_DECAY, BN_EPS};
pub use dense::{Dense, DenseAdam, DenseGrads};
pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::Matrix;
pub use rng::Rng;

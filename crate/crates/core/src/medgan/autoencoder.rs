use log::debug;

use super::MedganConfig;
use crate::data::{DataKind, RecordDataset};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Dense, DenseAdam, DenseGrads, Direction, Matrix, Rng};

/// Probabilities fed to a logarithm are clamped to `[LOG_FLOOR, 1 - LOG_FLOOR]`.
pub const LOG_FLOOR: f64 = 1e-8;

/// Single-layer encoder and decoder around an `h`-dimensional code.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub kind: DataKind,
    pub encoder: Dense,
    pub decoder: Dense,
}

#[derive(Clone, Debug)]
pub struct AutoencoderGrads {
    pub encoder: DenseGrads,
    pub decoder: DenseGrads,
}

/// Encoder activation: tanh for binary, ReLU for counts.
pub fn encoder_activation(kind: DataKind) -> Activation {
    match kind {
        DataKind::Binary => Activation::Tanh,
        DataKind::Count => Activation::Relu,
    }
}

/// Decoder output activation: sigmoid for binary, ReLU for counts.
pub fn decoder_activation(kind: DataKind) -> Activation {
    match kind {
        DataKind::Binary => Activation::Sigmoid,
        DataKind::Count => Activation::Relu,
    }
}

/// Mean per-record reconstruction loss: squared error for counts, cross
/// entropy (with clamped probabilities) for binary records.
pub fn reconstruction_loss(kind: DataKind, x: &Matrix, recon: &Matrix) -> f64 {
    let m = x.rows().max(1) as f64;
    let total: f64 = match kind {
        DataKind::Count => x
            .as_slice()
            .iter()
            .zip(recon.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum(),
        DataKind::Binary => x
            .as_slice()
            .iter()
            .zip(recon.as_slice())
            .map(|(&t, &p)| {
                let p = p.clamp(LOG_FLOOR, 1.0 - LOG_FLOOR);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum(),
    };
    total / m
}

/// Gradient of [`reconstruction_loss`] w.r.t. the reconstruction. Entries
/// sitting on the clamp get zero gradient.
pub fn reconstruction_loss_grad(kind: DataKind, x: &Matrix, recon: &Matrix) -> Matrix {
    let m = x.rows().max(1) as f64;
    x.zip_map(recon, |t, p| match kind {
        DataKind::Count => 2.0 * (p - t) / m,
        DataKind::Binary => {
            if p <= LOG_FLOOR || p >= 1.0 - LOG_FLOOR {
                0.0
            } else {
                (-(t / p) + (1.0 - t) / (1.0 - p)) / m
            }
        }
    })
    .expect("reconstruction shapes agree")
}

impl Autoencoder {
    pub fn new(codes: usize, embed_dim: usize, kind: DataKind, rng: &mut Rng) -> Self {
        Autoencoder {
            kind,
            encoder: Dense::new(codes, embed_dim, rng),
            decoder: Dense::new(embed_dim, codes, rng),
        }
    }

    pub fn codes(&self) -> usize {
        self.encoder.fan_in()
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.fan_out()
    }

    pub fn encode(&self, x: &Matrix) -> Matrix {
        encoder_activation(self.kind).forward_owned(self.encoder.forward(x))
    }

    pub fn decode(&self, code: &Matrix) -> Matrix {
        decoder_activation(self.kind).forward_owned(self.decoder.forward(code))
    }

    pub fn reconstruct(&self, x: &Matrix) -> Matrix {
        self.decode(&self.encode(x))
    }

    /// Decoder backward pass: returns its parameter gradients and the
    /// gradient w.r.t. the code, given the decoder's input and output.
    pub fn decoder_backward(
        &self,
        code: &Matrix,
        output: &Matrix,
        grad_output: &Matrix,
    ) -> (DenseGrads, Matrix) {
        let grad_pre = decoder_activation(self.kind).backward_from_output(output, grad_output);
        let grads = self.decoder.param_grads(code, &grad_pre);
        (grads, self.decoder.input_grad(&grad_pre))
    }

    pub fn loss_and_grads(&self, x: &Matrix) -> (f64, AutoencoderGrads) {
        let code = self.encode(x);
        let recon = self.decode(&code);
        let loss = reconstruction_loss(self.kind, x, &recon);
        let g_recon = reconstruction_loss_grad(self.kind, x, &recon);
        let (decoder, g_code) = self.decoder_backward(&code, &recon, &g_recon);
        let g_pre = encoder_activation(self.kind).backward_from_output(&code, &g_code);
        let encoder = self.encoder.param_grads(x, &g_pre);
        (loss, AutoencoderGrads { encoder, decoder })
    }
}

/// Minimises the reconstruction loss with Adam over `ae_epochs` passes of
/// shuffled, non-overlapping minibatches. Returns the model, and the mean
/// loss of each epoch.
pub fn pretrain_autoencoder(
    config: &MedganConfig,
    data: &RecordDataset,
    rng: &mut Rng,
) -> Result<(Autoencoder, Vec<f64>)> {
    data.require_kind(config.kind)?;
    if data.is_empty() {
        return Err(Error::invalid(
            "cannot pretrain the autoencoder on an empty dataset",
        ));
    }
    let mut ae = Autoencoder::new(data.dims(), config.embed_dim, config.kind, rng);
    let losses = fit_autoencoder(&mut ae, config, data, rng);
    Ok((ae, losses))
}

pub(crate) fn fit_autoencoder(
    ae: &mut Autoencoder,
    config: &MedganConfig,
    data: &RecordDataset,
    rng: &mut Rng,
) -> Vec<f64> {
    let x = data.matrix();
    let n = x.rows();
    let batch = config.ae_batch_size.min(n);
    let batches = n / batch;
    let mut enc_opt = DenseAdam::new(&ae.encoder, config.learning_rate);
    let mut dec_opt = DenseAdam::new(&ae.decoder, config.learning_rate);
    let mut epoch_losses = Vec::with_capacity(config.ae_epochs);
    for epoch in 0..config.ae_epochs {
        let perm = rng.permutation(n);
        let mut total = 0.0;
        for b in 0..batches {
            let xb = x.select_rows(&perm[b * batch..(b + 1) * batch]);
            let (loss, grads) = ae.loss_and_grads(&xb);
            enc_opt.step(&mut ae.encoder, &grads.encoder, Direction::Descend);
            dec_opt.step(&mut ae.decoder, &grads.decoder, Direction::Descend);
            total += loss;
        }
        let mean = total / batches as f64;
        debug!("autoencoder epoch {}: loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }
    epoch_losses
}

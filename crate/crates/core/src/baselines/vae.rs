use std::path::Path;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::data::{
    read_checkpoint, write_checkpoint, Checkpoint, CheckpointBlock, CodeVocabulary, DataKind,
    RecordDataset,
};
use crate::error::{Error, Result};
use crate::medgan::{
    discretize, push_dense, read_dense, reconstruction_loss, reconstruction_loss_grad,
};
use crate::numerics::{Activation, Dense, DenseAdam, DenseGrads, Direction, Matrix, Rng};

pub const VAE_MODEL_NAME: &str = "vae";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub kind: DataKind,
    /// Hidden widths of the encoder; the decoder mirrors them.
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            kind: DataKind::Binary,
            hidden_dims: vec![128, 128, 128],
            latent_dim: 128,
            batch_size: 1000,
            iterations: 1000,
            learning_rate: 0.001,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.batch_size == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::invalid("VAE widths and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }
}

fn hidden_activation(kind: DataKind) -> Activation {
    match kind {
        DataKind::Binary => Activation::Tanh,
        DataKind::Count => Activation::Relu,
    }
}

fn output_activation(kind: DataKind) -> Activation {
    match kind {
        DataKind::Binary => Activation::Sigmoid,
        DataKind::Count => Activation::Relu,
    }
}

/// Encoder to `(mu, log sigma^2)` and decoder back to record space.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams {
    pub config: VaeConfig,
    pub vocab: CodeVocabulary,
    pub encoder: Vec<Dense>,
    pub mu: Dense,
    pub log_var: Dense,
    /// Hidden layers followed by the output layer.
    pub decoder: Vec<Dense>,
}

/// Per-record KL divergence `KL(N(mu, sigma^2) || N(0, I))`, averaged over rows.
pub fn gaussian_kl(mu: &Matrix, log_var: &Matrix) -> f64 {
    let m = mu.rows().max(1) as f64;
    mu.as_slice()
        .iter()
        .zip(log_var.as_slice())
        .map(|(&u, &lv)| 0.5 * (u * u + lv.exp() - lv - 1.0))
        .sum::<f64>()
        / m
}

struct MlpCache {
    /// Input to each layer, then the final output.
    acts: Vec<Matrix>,
}

fn mlp_forward(
    layers: &[Dense],
    x: &Matrix,
    hidden: Activation,
    out: Option<Activation>,
) -> MlpCache {
    let mut acts = vec![x.clone()];
    for (i, l) in layers.iter().enumerate() {
        let pre = l.forward(acts.last().expect("non-empty"));
        let act = if i + 1 == layers.len() {
            out
        } else {
            Some(hidden)
        };
        acts.push(match act {
            Some(a) => a.forward_owned(pre),
            None => pre,
        });
    }
    MlpCache { acts }
}

/// Backward through an MLP given the gradient w.r.t. its final output.
fn mlp_backward(
    layers: &[Dense],
    cache: &MlpCache,
    grad_out: &Matrix,
    hidden: Activation,
    out: Option<Activation>,
) -> (Vec<DenseGrads>, Matrix) {
    let mut grads = Vec::with_capacity(layers.len());
    let mut g = grad_out.clone();
    for (i, l) in layers.iter().enumerate().rev() {
        let act = if i + 1 == layers.len() {
            out
        } else {
            Some(hidden)
        };
        let g_pre = match act {
            Some(a) => a.backward_from_output(&cache.acts[i + 1], &g),
            None => g,
        };
        grads.push(l.param_grads(&cache.acts[i], &g_pre));
        g = l.input_grad(&g_pre);
    }
    grads.reverse();
    (grads, g)
}

#[derive(Clone, Debug)]
pub struct VaeGrads {
    pub encoder: Vec<DenseGrads>,
    pub mu: DenseGrads,
    pub log_var: DenseGrads,
    pub decoder: Vec<DenseGrads>,
}

impl VaeParams {
    pub fn new(config: &VaeConfig, vocab: CodeVocabulary, rng: &mut Rng) -> Self {
        let mut widths = vec![vocab.len()];
        widths.extend(&config.hidden_dims);
        let encoder: Vec<Dense> = widths
            .windows(2)
            .map(|w| Dense::new(w[0], w[1], rng))
            .collect();
        let top = *widths.last().expect("non-empty");
        let mu = Dense::new(top, config.latent_dim, rng);
        let log_var = Dense::new(top, config.latent_dim, rng);
        let mut dec_widths = vec![config.latent_dim];
        dec_widths.extend(config.hidden_dims.iter().rev());
        dec_widths.push(vocab.len());
        let decoder = dec_widths
            .windows(2)
            .map(|w| Dense::new(w[0], w[1], rng))
            .collect();
        VaeParams {
            config: config.clone(),
            vocab,
            encoder,
            mu,
            log_var,
            decoder,
        }
    }

    fn kind(&self) -> DataKind {
        self.config.kind
    }

    pub fn encode(&self, x: &Matrix) -> (Matrix, Matrix) {
        let h = mlp_forward(
            &self.encoder,
            x,
            hidden_activation(self.kind()),
            Some(hidden_activation(self.kind())),
        );
        let top = h.acts.last().expect("non-empty");
        (self.mu.forward(top), self.log_var.forward(top))
    }

    pub fn decode(&self, z: &Matrix) -> Matrix {
        let c = mlp_forward(
            &self.decoder,
            z,
            hidden_activation(self.kind()),
            Some(output_activation(self.kind())),
        );
        c.acts.into_iter().last().expect("non-empty")
    }

    /// Negative ELBO (reconstruction loss plus KL, per record) and its
    /// gradients, using the reparameterisation `z = mu + exp(log_var / 2) * eps`
    /// with the given noise.
    pub fn loss_and_grads(&self, x: &Matrix, eps: &Matrix) -> (f64, VaeGrads) {
        let kind = self.kind();
        let (hid, out) = (hidden_activation(kind), output_activation(kind));
        let m = x.rows().max(1) as f64;
        let enc = mlp_forward(&self.encoder, x, hid, Some(hid));
        let top = enc.acts.last().expect("non-empty");
        let mu = self.mu.forward(top);
        let lv = self.log_var.forward(top);
        let sd = lv.map(|v| (0.5 * v).exp());
        let z = mu
            .add(&sd.hadamard(eps).expect("eps shape"))
            .expect("latent shape");
        let dec = mlp_forward(&self.decoder, &z, hid, Some(out));
        let recon = dec.acts.last().expect("non-empty");
        let loss = reconstruction_loss(kind, x, recon) + gaussian_kl(&mu, &lv);

        let g_recon = reconstruction_loss_grad(kind, x, recon);
        let (decoder, g_z) = mlp_backward(&self.decoder, &dec, &g_recon, hid, Some(out));
        let g_mu = g_z.zip_map(&mu, |g, u| g + u / m).expect("latent shape");
        let mut g_lv = Matrix::zeros(lv.rows(), lv.cols());
        for (i, g) in g_lv.as_mut_slice().iter_mut().enumerate() {
            let (gz, e, s, v) = (
                g_z.as_slice()[i],
                eps.as_slice()[i],
                sd.as_slice()[i],
                lv.as_slice()[i],
            );
            *g = gz * e * 0.5 * s + 0.5 * (v.exp() - 1.0) / m;
        }
        let mu_grads = self.mu.param_grads(top, &g_mu);
        let lv_grads = self.log_var.param_grads(top, &g_lv);
        let mut g_top = self.mu.input_grad(&g_mu);
        g_top
            .add_assign(&self.log_var.input_grad(&g_lv))
            .expect("hidden shape");
        let (encoder, _) = mlp_backward(&self.encoder, &enc, &g_top, hid, Some(hid));
        (
            loss,
            VaeGrads {
                encoder,
                mu: mu_grads,
                log_var: lv_grads,
                decoder,
            },
        )
    }

    /// Decodes `n` prior draws and discretises them like medGAN output.
    pub fn generate(&self, n: usize, rng: &mut Rng) -> Result<RecordDataset> {
        let z = rng.standard_normal(n, self.config.latent_dim);
        let raw = if n == 0 {
            Matrix::zeros(0, self.vocab.len())
        } else {
            self.decode(&z)
        };
        RecordDataset::new(
            discretize(self.kind(), &raw),
            self.kind(),
            self.vocab.clone(),
        )
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut blocks = Vec::new();
        let mut push = |name: String, value: Matrix| blocks.push(CheckpointBlock { name, value });
        for (i, l) in self.encoder.iter().enumerate() {
            push_dense(&mut push, &format!("enc.{i}"), l);
        }
        push_dense(&mut push, "mu", &self.mu);
        push_dense(&mut push, "log_var", &self.log_var);
        for (i, l) in self.decoder.iter().enumerate() {
            push_dense(&mut push, &format!("dec.{i}"), l);
        }
        Ok(Checkpoint {
            model: VAE_MODEL_NAME.into(),
            kind: self.kind(),
            codes: self.vocab.codes().to_vec(),
            seed: self.config.seed,
            config: serde_json::to_value(&self.config)?,
            blocks,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.model != VAE_MODEL_NAME {
            return Err(Error::Format(format!(
                "checkpoint holds a `{}` model, not {VAE_MODEL_NAME}",
                ckpt.model
            )));
        }
        let config: VaeConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Format(format!("invalid config in checkpoint: {e}")))?;
        config.validate()?;
        let vocab = CodeVocabulary::new(ckpt.codes.clone())?;
        let depth = config.hidden_dims.len();
        let params = VaeParams {
            encoder: (0..depth)
                .map(|i| read_dense(ckpt, &format!("enc.{i}")))
                .collect::<Result<_>>()?,
            mu: read_dense(ckpt, "mu")?,
            log_var: read_dense(ckpt, "log_var")?,
            decoder: (0..=depth)
                .map(|i| read_dense(ckpt, &format!("dec.{i}")))
                .collect::<Result<_>>()?,
            config,
            vocab,
        };
        let reference = VaeParams::new(&params.config, params.vocab.clone(), &mut Rng::new(0));
        let shapes = |p: &VaeParams| -> Vec<(usize, usize)> {
            p.encoder
                .iter()
                .chain([&p.mu, &p.log_var])
                .chain(&p.decoder)
                .map(|l| l.weight.shape())
                .collect()
        };
        if shapes(&params) != shapes(&reference) {
            return Err(Error::Format(
                "VAE block shapes disagree with config".into(),
            ));
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(&self.to_checkpoint()?, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&read_checkpoint(path)?)
    }
}

struct VaeAdam {
    encoder: Vec<DenseAdam>,
    mu: DenseAdam,
    log_var: DenseAdam,
    decoder: Vec<DenseAdam>,
}

impl VaeAdam {
    fn new(p: &VaeParams, lr: f64) -> Self {
        VaeAdam {
            encoder: p.encoder.iter().map(|l| DenseAdam::new(l, lr)).collect(),
            mu: DenseAdam::new(&p.mu, lr),
            log_var: DenseAdam::new(&p.log_var, lr),
            decoder: p.decoder.iter().map(|l| DenseAdam::new(l, lr)).collect(),
        }
    }

    fn step(&mut self, p: &mut VaeParams, g: &VaeGrads) {
        let dir = Direction::Descend;
        for ((o, l), g) in self.encoder.iter_mut().zip(&mut p.encoder).zip(&g.encoder) {
            o.step(l, g, dir);
        }
        self.mu.step(&mut p.mu, &g.mu, dir);
        self.log_var.step(&mut p.log_var, &g.log_var, dir);
        for ((o, l), g) in self.decoder.iter_mut().zip(&mut p.decoder).zip(&g.decoder) {
            o.step(l, g, dir);
        }
    }
}

/// Trains for `iterations` Adam steps, each on a uniformly drawn minibatch
/// (reshuffled whenever the data is exhausted). Returns the model and the
/// loss per iteration.
pub fn vae_train(
    config: &VaeConfig,
    data: &RecordDataset,
    rng: &mut Rng,
) -> Result<(VaeParams, Vec<f64>)> {
    config.validate()?;
    data.require_kind(config.kind)?;
    if data.is_empty() {
        return Err(Error::invalid("cannot train a VAE on an empty dataset"));
    }
    let mut params = VaeParams::new(config, data.vocabulary().clone(), rng);
    let mut opt = VaeAdam::new(&params, config.learning_rate);
    let x = data.matrix();
    let n = x.rows();
    let m = config.batch_size.min(n);
    let mut perm = rng.permutation(n);
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        if cursor + m > n {
            perm = rng.permutation(n);
            cursor = 0;
        }
        let xb = x.select_rows(&perm[cursor..cursor + m]);
        cursor += m;
        let eps = rng.standard_normal(m, config.latent_dim);
        let (loss, grads) = params.loss_and_grads(&xb, &eps);
        opt.step(&mut params, &grads);
        if it % 100 == 0 {
            debug!("vae iteration {it}: loss {loss:.5}");
        }
        losses.push(loss);
    }
    Ok((params, losses))
}

pub fn vae_generate(params: &VaeParams, n: usize, rng: &mut Rng) -> Result<RecordDataset> {
    params.generate(n, rng)
}

use std::path::Path;

use log::{debug, info, warn};

use super::autoencoder::{fit_autoencoder, reconstruction_loss, Autoencoder};
use super::discriminator::{
    discriminator_objective_and_grads, generator_objective_and_sample_grad, Discriminator,
    DiscriminatorAdam,
};
use super::generator::{Generator, GeneratorAdam, GeneratorGrads, GeneratorLayer};
use super::MedganConfig;
use crate::data::{
    read_checkpoint, write_checkpoint, Checkpoint, CheckpointBlock, CodeVocabulary, DataKind,
    RecordDataset,
};
use crate::error::{Error, Result};
use crate::numerics::{
    BatchNormState, BnMode, Dense, DenseAdam, DenseGrads, Direction, Matrix, Rng,
};

pub const MODEL_NAME: &str = "medgan";

/// Losses for one GAN epoch (minimisation form: negated objectives).
/// Epoch 0 is the state right after pretraining.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub d_loss: Option<f64>,
    pub g_loss: Option<f64>,
    /// Reconstruction loss of `Dec(Enc(x))` on the epoch's last real batch,
    /// which tracks how far decoder fine-tuning has moved.
    pub ae_loss: Option<f64>,
}

/// A trained model: autoencoder, generator and discriminator, plus the
/// configuration and vocabulary needed to generate records.
#[derive(Clone, Debug, PartialEq)]
pub struct MedganModel {
    pub config: MedganConfig,
    pub vocab: CodeVocabulary,
    pub autoencoder: Autoencoder,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub trace: Vec<EpochLoss>,
}

/// Runs autoencoder pretraining (if enabled) and then the adversarial loop:
/// per iteration, `k` discriminator ascents on fresh real and prior
/// minibatches, then one joint ascent of the generator and decoder.
///
/// An epoch is one pass over shuffled, non-overlapping minibatches of size
/// `m`; each discriminator step consumes one of them, so an epoch has
/// `floor(N/m) / k` iterations (at least one). The trailing partial batch is
/// dropped.
pub fn train(config: &MedganConfig, data: &RecordDataset, rng: &mut Rng) -> Result<MedganModel> {
    config.validate()?;
    data.require_kind(config.kind)?;
    let n = data.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 records to train (batch normalization), got {n}"
        )));
    }
    let mut m = config.batch_size;
    if n < m {
        warn!("dataset has {n} records, reducing minibatch size from {m} to {n}");
        m = n;
    }

    let codes = data.dims();
    let mut ae = Autoencoder::new(codes, config.embed_dim, config.kind, rng);
    let mut generator = Generator::new(config.prior_dim, config.generator_layers, config.kind, rng);
    let mut disc = Discriminator::new(
        codes,
        &config.discriminator_dims,
        config.minibatch_averaging,
        rng,
    );

    let mut trace = Vec::with_capacity(config.gan_epochs + 1);
    let mut ae_loss = None;
    if config.pretrain_autoencoder {
        let losses = fit_autoencoder(&mut ae, config, data, rng);
        ae_loss = losses.last().copied();
        info!(
            "pretrained autoencoder for {} epochs, final loss {:?}",
            losses.len(),
            ae_loss
        );
    }
    trace.push(EpochLoss {
        epoch: 0,
        d_loss: None,
        g_loss: None,
        ae_loss,
    });

    let lr = config.learning_rate;
    let mut d_opt = DiscriminatorAdam::new(&disc, lr);
    let mut g_opt = GeneratorAdam::new(&generator, lr);
    let mut dec_opt = DenseAdam::new(&ae.decoder, lr);

    let x = data.matrix();
    let batches = n / m;
    let k = config.discriminator_steps;
    let iterations = (batches / k).max(1);
    for epoch in 1..=config.gan_epochs {
        let perm = rng.permutation(n);
        let batch = |b: usize| x.select_rows(&perm[b * m..(b + 1) * m]);
        let (mut d_sum, mut g_sum) = (0.0, 0.0);
        let mut last_real = None;
        for it in 0..iterations {
            for j in 0..k {
                let real = batch((it * k + j) % batches);
                let z = rng.standard_normal(m, config.prior_dim);
                let (h, _) = generator.forward(&z, BnMode::Train)?;
                let mut fake = ae.decode(&h);
                if config.rounding_for_d {
                    fake.map_inplace(f64::round);
                }
                let (objective, grads) = discriminator_objective_and_grads(&disc, &real, &fake)?;
                d_opt.step(&mut disc, &grads, Direction::Ascend);
                d_sum -= objective;
                last_real = Some(real);
            }

            let z = rng.standard_normal(m, config.prior_dim);
            let (objective, gen_grads, dec_grads) =
                generator_step_grads(&mut generator, &ae, &disc, &z)?;
            g_opt.step(&mut generator, &gen_grads, Direction::Ascend);
            dec_opt.step(&mut ae.decoder, &dec_grads, Direction::Ascend);
            g_sum -= objective;
        }
        let d_loss = d_sum / (iterations * k) as f64;
        let g_loss = g_sum / iterations as f64;
        let ae_loss = last_real.map(|r| reconstruction_loss(config.kind, &r, &ae.reconstruct(&r)));
        debug!("epoch {epoch}: d_loss {d_loss:.5} g_loss {g_loss:.5} ae_loss {ae_loss:?}");
        trace.push(EpochLoss {
            epoch,
            d_loss: Some(d_loss),
            g_loss: Some(g_loss),
            ae_loss,
        });
    }

    Ok(MedganModel {
        config: config.clone(),
        vocab: data.vocabulary().clone(),
        autoencoder: ae,
        generator,
        discriminator: disc,
        trace,
    })
}

/// Generator objective `mean log D(Dec(G(z)))` and its gradients w.r.t. the
/// generator and decoder parameters. Runs the generator in train mode.
pub fn generator_step_grads(
    generator: &mut Generator,
    ae: &Autoencoder,
    disc: &Discriminator,
    z: &Matrix,
) -> Result<(f64, GeneratorGrads, DenseGrads)> {
    let (h, g_cache) = generator.forward(z, BnMode::Train)?;
    let fake = ae.decode(&h);
    let (objective, g_fake) = generator_objective_and_sample_grad(disc, &fake)?;
    let (dec_grads, g_h) = ae.decoder_backward(&h, &fake, &g_fake);
    let gen_grads = generator.backward(&g_cache, &g_h);
    Ok((objective, gen_grads, dec_grads))
}

const GENERATE_CHUNK: usize = 1024;

impl MedganModel {
    /// Continuous decoder outputs `Dec(G(z))` for `n` prior draws, with batch
    /// normalization in inference mode.
    pub fn sample_raw(&self, n: usize, rng: &mut Rng) -> Result<Matrix> {
        let codes = self.vocab.len();
        let mut out = Matrix::zeros(0, codes);
        let mut done = 0;
        while done < n {
            let rows = GENERATE_CHUNK.min(n - done);
            let z = rng.standard_normal(rows, self.config.prior_dim);
            let decoded = self.autoencoder.decode(&self.generator.infer(&z)?);
            out = out.vstack(&decoded)?;
            done += rows;
        }
        Ok(out)
    }

    /// `n` synthetic records: binary outputs thresholded at 0.5, counts
    /// rounded to the nearest non-negative integer.
    pub fn generate(&self, n: usize, rng: &mut Rng) -> Result<RecordDataset> {
        let raw = self.sample_raw(n, rng)?;
        RecordDataset::new(
            discretize(self.config.kind, &raw),
            self.config.kind,
            self.vocab.clone(),
        )
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut blocks = Vec::new();
        let mut push = |name: String, value: Matrix| blocks.push(CheckpointBlock { name, value });
        push_dense(&mut push, "enc", &self.autoencoder.encoder);
        push_dense(&mut push, "dec", &self.autoencoder.decoder);
        for (k, l) in self.generator.layers.iter().enumerate() {
            push(format!("gen.{k}.w"), l.weight.clone());
            push(format!("gen.{k}.gamma"), Matrix::row_vector(&l.bn.gamma));
            push(format!("gen.{k}.beta"), Matrix::row_vector(&l.bn.beta));
            push(
                format!("gen.{k}.moving_mean"),
                Matrix::row_vector(&l.bn.moving_mean),
            );
            push(
                format!("gen.{k}.moving_var"),
                Matrix::row_vector(&l.bn.moving_var),
            );
        }
        for (k, l) in self.discriminator.layers.iter().enumerate() {
            push_dense(&mut push, &format!("disc.{k}"), l);
        }
        Ok(Checkpoint {
            model: MODEL_NAME.into(),
            kind: self.config.kind,
            codes: self.vocab.codes().to_vec(),
            seed: self.config.seed,
            config: serde_json::to_value(&self.config)?,
            blocks,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.model != MODEL_NAME {
            return Err(Error::Format(format!(
                "checkpoint holds a `{}` model, not {MODEL_NAME}",
                ckpt.model
            )));
        }
        let config: MedganConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Format(format!("invalid config in checkpoint: {e}")))?;
        config.validate()?;
        if config.kind != ckpt.kind {
            return Err(Error::Format(
                "checkpoint kind disagrees with its config".into(),
            ));
        }
        let vocab = CodeVocabulary::new(ckpt.codes.clone())?;
        let autoencoder = Autoencoder {
            kind: config.kind,
            encoder: read_dense(ckpt, "enc")?,
            decoder: read_dense(ckpt, "dec")?,
        };
        let mut layers = Vec::with_capacity(config.generator_layers);
        for k in 0..config.generator_layers {
            let row = |name: &str| -> Result<Vec<f64>> {
                Ok(ckpt.block(&format!("gen.{k}.{name}"))?.as_slice().to_vec())
            };
            let mut bn = BatchNormState::new(config.prior_dim);
            bn.gamma = row("gamma")?;
            bn.beta = row("beta")?;
            bn.moving_mean = row("moving_mean")?;
            bn.moving_var = row("moving_var")?;
            layers.push(GeneratorLayer {
                weight: ckpt.block(&format!("gen.{k}.w"))?.clone(),
                bn,
            });
        }
        let disc_layers = (0..=config.discriminator_dims.len())
            .map(|k| read_dense(ckpt, &format!("disc.{k}")))
            .collect::<Result<Vec<_>>>()?;
        let mut discriminator = Discriminator::new(
            vocab.len(),
            &config.discriminator_dims,
            config.minibatch_averaging,
            &mut Rng::new(0),
        );
        if discriminator
            .layers
            .iter()
            .zip(&disc_layers)
            .any(|(a, b)| a.weight.shape() != b.weight.shape())
        {
            return Err(Error::Format(
                "discriminator block shapes disagree with config".into(),
            ));
        }
        discriminator.layers = disc_layers;
        let model = MedganModel {
            vocab,
            autoencoder,
            generator: Generator {
                kind: config.kind,
                layers,
            },
            discriminator,
            trace: Vec::new(),
            config,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let c = self.vocab.len();
        let h = self.config.embed_dim;
        let ok = self.autoencoder.encoder.weight.shape() == (c, h)
            && self.autoencoder.decoder.weight.shape() == (h, c)
            && self.generator.layers.iter().all(|l| {
                l.weight.shape() == (h, h) && l.bn.beta.len() == h && l.bn.moving_var.len() == h
            });
        if !ok {
            return Err(Error::Format(
                "parameter block shapes disagree with config".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(&self.to_checkpoint()?, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&read_checkpoint(path)?)
    }
}

/// Maps continuous outputs to record values: threshold at 0.5 (binary) or
/// round and clamp at zero (count).
pub fn discretize(kind: DataKind, raw: &Matrix) -> Matrix {
    match kind {
        DataKind::Binary => raw.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }),
        DataKind::Count => raw.map(|v| v.round().max(0.0)),
    }
}

/// Writes the loss trace as CSV with columns `epoch,d_loss,g_loss,ae_loss`;
/// missing values are left empty.
pub fn write_loss_trace(trace: &[EpochLoss], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut out = String::from("epoch,d_loss,g_loss,ae_loss\n");
    for e in trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch,
            cell(e.d_loss),
            cell(e.g_loss),
            cell(e.ae_loss)
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Convenience wrapper: `model.generate(n, rng)`.
pub fn generate(model: &MedganModel, n: usize, rng: &mut Rng) -> Result<RecordDataset> {
    model.generate(n, rng)
}

pub fn save_checkpoint(model: &MedganModel, path: impl AsRef<Path>) -> Result<()> {
    model.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MedganModel> {
    MedganModel::load(path)
}

pub(crate) fn push_dense(push: &mut impl FnMut(String, Matrix), prefix: &str, layer: &Dense) {
    push(format!("{prefix}.w"), layer.weight.clone());
    push(format!("{prefix}.b"), Matrix::row_vector(&layer.bias));
}

pub(crate) fn read_dense(ckpt: &Checkpoint, prefix: &str) -> Result<Dense> {
    let weight = ckpt.block(&format!("{prefix}.w"))?.clone();
    let bias = ckpt.block(&format!("{prefix}.b"))?.as_slice().to_vec();
    if bias.len() != weight.cols() {
        return Err(Error::Format(format!(
            "bias of `{prefix}` does not match its weight"
        )));
    }
    Ok(Dense { weight, bias })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, GroundTruthModel};
    use crate::numerics::grad_check;

    fn small_config(kind: DataKind) -> MedganConfig {
        MedganConfig {
            kind,
            embed_dim: 8,
            prior_dim: 8,
            discriminator_dims: vec![12, 6],
            batch_size: 32,
            ae_epochs: 3,
            ae_batch_size: 20,
            gan_epochs: 2,
            ..Default::default()
        }
    }

    fn corpus(kind: DataKind, n: usize, seed: u64) -> RecordDataset {
        let mut rng = Rng::new(seed);
        let gt = GroundTruthModel::random(10, 2, kind, &mut rng);
        synth_corpus(&gt, n, &mut rng).unwrap()
    }

    #[test]
    fn no_gan_epochs_keeps_pretrained_decoder() {
        let d = corpus(DataKind::Binary, 100, 0);
        let config = MedganConfig {
            gan_epochs: 0,
            ..small_config(DataKind::Binary)
        };
        let model = train(&config, &d, &mut Rng::new(3)).unwrap();
        // replay the same stream: model init, then pretraining
        let mut rng = Rng::new(3);
        let mut ae = Autoencoder::new(10, 8, DataKind::Binary, &mut rng);
        Generator::new(8, config.generator_layers, DataKind::Binary, &mut rng);
        Discriminator::new(10, &config.discriminator_dims, true, &mut rng);
        fit_autoencoder(&mut ae, &config, &d, &mut rng);
        assert_eq!(model.autoencoder, ae);
        assert_eq!(model.trace.len(), 1);
    }

    #[test]
    fn gan_training_moves_the_decoder() {
        let d = corpus(DataKind::Binary, 100, 1);
        let c = small_config(DataKind::Binary);
        let before = train(
            &MedganConfig {
                gan_epochs: 0,
                ..c.clone()
            },
            &d,
            &mut Rng::new(4),
        )
        .unwrap();
        let after = train(&c, &d, &mut Rng::new(4)).unwrap();
        assert_eq!(before.autoencoder.encoder, after.autoencoder.encoder);
        assert_ne!(before.autoencoder.decoder, after.autoencoder.decoder);
        assert_eq!(after.trace.len(), 3);
        assert!(after.trace[1..]
            .iter()
            .all(|e| e.d_loss.unwrap().is_finite() && e.g_loss.unwrap().is_finite()));
    }

    #[test]
    fn training_is_deterministic() {
        for kind in [DataKind::Binary, DataKind::Count] {
            let d = corpus(kind, 80, 2);
            let c = small_config(kind);
            let a = train(&c, &d, &mut Rng::new(5))
                .unwrap()
                .to_checkpoint()
                .unwrap()
                .to_bytes()
                .unwrap();
            let b = train(&c, &d, &mut Rng::new(5))
                .unwrap()
                .to_checkpoint()
                .unwrap()
                .to_bytes()
                .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn discriminator_input_width_follows_averaging() {
        let d = corpus(DataKind::Binary, 60, 3);
        for mba in [true, false] {
            let c = MedganConfig {
                minibatch_averaging: mba,
                gan_epochs: 1,
                ..small_config(DataKind::Binary)
            };
            let model = train(&c, &d, &mut Rng::new(0)).unwrap();
            assert_eq!(
                model.discriminator.layers[0].fan_in(),
                if mba { 20 } else { 10 }
            );
        }
    }

    #[test]
    fn small_dataset_shrinks_the_batch() {
        let d = corpus(DataKind::Count, 12, 4);
        let model = train(&small_config(DataKind::Count), &d, &mut Rng::new(0)).unwrap();
        assert_eq!(model.trace.len(), 3);
        let one = d.select(&[0]);
        assert!(train(&small_config(DataKind::Count), &one, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn end_to_end_generator_gradients_match_finite_differences() {
        for kind in [DataKind::Binary, DataKind::Count] {
            for seed in 0..5 {
                let mut rng = Rng::new(100 + seed);
                let mut g = Generator::new(8, 2, kind, &mut rng);
                let mut ae = Autoencoder::new(10, 8, kind, &mut rng);
                let disc = Discriminator::new(10, &[12, 6], true, &mut rng);
                if kind == DataKind::Count {
                    // keep the ReLU decoder away from its kink for most units
                    ae.decoder.bias.iter_mut().for_each(|b| *b = 0.5);
                }
                let z = rng.standard_normal(16, 8);
                let mut p0: Vec<f64> = Vec::new();
                for l in &g.layers {
                    p0.extend_from_slice(l.weight.as_slice());
                }
                p0.extend_from_slice(ae.decoder.weight.as_slice());
                p0.extend_from_slice(&ae.decoder.bias);
                let r = grad_check(
                    |p| {
                        let mut off = 0;
                        for l in &mut g.layers {
                            let len = l.weight.as_slice().len();
                            l.weight.as_mut_slice().copy_from_slice(&p[off..off + len]);
                            off += len;
                        }
                        let len = ae.decoder.weight.as_slice().len();
                        ae.decoder
                            .weight
                            .as_mut_slice()
                            .copy_from_slice(&p[off..off + len]);
                        ae.decoder.bias.copy_from_slice(&p[off + len..]);
                        let mut gc = g.clone();
                        let (obj, gg, dg) = generator_step_grads(&mut gc, &ae, &disc, &z).unwrap();
                        let mut flat: Vec<f64> = Vec::new();
                        for w in &gg.weights {
                            flat.extend_from_slice(w.as_slice());
                        }
                        flat.extend_from_slice(dg.weight.as_slice());
                        flat.extend_from_slice(&dg.bias);
                        (obj, flat)
                    },
                    &p0,
                    1e-4,
                );
                assert!(r.passed, "{kind} seed {seed}: {r:?}");
            }
        }
    }

    #[test]
    fn generation_contracts() {
        for kind in [DataKind::Binary, DataKind::Count] {
            let d = corpus(kind, 80, 6);
            let model = train(&small_config(kind), &d, &mut Rng::new(1)).unwrap();
            let empty = model.generate(0, &mut Rng::new(0)).unwrap();
            assert_eq!(empty.matrix().shape(), (0, 10));
            let s = model.generate(2500, &mut Rng::new(9)).unwrap();
            assert_eq!(s.matrix().shape(), (2500, 10));
            assert_eq!(s.vocabulary(), d.vocabulary());
            match kind {
                DataKind::Binary => {
                    assert!(s.matrix().as_slice().iter().all(|&v| v == 0.0 || v == 1.0))
                }
                DataKind::Count => assert!(s
                    .matrix()
                    .as_slice()
                    .iter()
                    .all(|&v| v >= 0.0 && v.fract() == 0.0)),
            }
            assert_eq!(s, model.generate(2500, &mut Rng::new(9)).unwrap());
            // chunking does not change the stream
            let prefix = model.generate(1000, &mut Rng::new(9)).unwrap();
            assert_eq!(prefix.matrix(), &s.matrix().row_range(0, 1000));
        }
    }

    #[test]
    fn checkpoint_round_trip_generates_identically() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [DataKind::Binary, DataKind::Count] {
            let d = corpus(kind, 80, 7);
            let model = train(&small_config(kind), &d, &mut Rng::new(2)).unwrap();
            let path = dir.path().join(format!("{kind}.ckpt"));
            model.save(&path).unwrap();
            let loaded = MedganModel::load(&path).unwrap();
            assert_eq!(loaded.autoencoder, model.autoencoder);
            assert_eq!(loaded.generator, model.generator);
            assert_eq!(loaded.discriminator, model.discriminator);
            assert_eq!(
                loaded.generate(300, &mut Rng::new(1)).unwrap(),
                model.generate(300, &mut Rng::new(1)).unwrap()
            );
        }
    }

    #[test]
    fn loss_trace_csv_has_one_row_per_epoch() {
        let d = corpus(DataKind::Binary, 60, 8);
        let model = train(&small_config(DataKind::Binary), &d, &mut Rng::new(0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_loss_trace(&model.trace, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,d_loss,g_loss,ae_loss");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,,,"));
    }
}

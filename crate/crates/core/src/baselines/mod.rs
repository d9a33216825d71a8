//! Comparison generators: random noise, independent sampling (Bernoulli for
//! binary records, Gaussian-kernel density per code for counts) and a VAE.

mod vae;

pub use vae::{
    gaussian_kl, vae_generate, vae_train, VaeConfig, VaeGrads, VaeParams, VAE_MODEL_NAME,
};

use crate::data::{DataKind, RecordDataset};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub const DEFAULT_FLIP_PROBABILITY: f64 = 0.1;
pub const KDE_BANDWIDTH: f64 = 0.75;

/// Flips every entry of a binary dataset independently with probability `flip_p`.
pub fn random_noise(data: &RecordDataset, flip_p: f64, rng: &mut Rng) -> Result<RecordDataset> {
    if data.kind() == DataKind::Count {
        return Err(Error::Unsupported(
            "random noise is only defined for binary records".into(),
        ));
    }
    if !(0.0..=1.0).contains(&flip_p) {
        return Err(Error::invalid(format!(
            "flip probability {flip_p} outside [0, 1]"
        )));
    }
    let mut x = data.matrix().clone();
    for v in x.as_mut_slice() {
        if rng.uniform() < flip_p {
            *v = 1.0 - *v;
        }
    }
    RecordDataset::new(x, DataKind::Binary, data.vocabulary().clone())
}

/// Samples `n` records with every code drawn independently from a Bernoulli
/// at its column mean in `data`.
pub fn independent_sampling_binary(
    data: &RecordDataset,
    n: usize,
    rng: &mut Rng,
) -> Result<RecordDataset> {
    data.require_kind(DataKind::Binary)?;
    let x = rng.bernoulli(&data.column_means(), n)?;
    RecordDataset::new(x, DataKind::Binary, data.vocabulary().clone())
}

/// Per-code Gaussian-kernel density estimate over observed counts.
#[derive(Clone, Debug, PartialEq)]
pub struct KdeModel {
    observations: Vec<Vec<f64>>,
    bandwidth: f64,
}

impl KdeModel {
    pub fn fit(data: &RecordDataset, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid("KDE bandwidth must be positive"));
        }
        if data.is_empty() {
            return Err(Error::invalid(
                "KDE needs at least one observation per code",
            ));
        }
        let x = data.matrix();
        Ok(KdeModel {
            observations: (0..x.cols()).map(|k| x.column(k)).collect(),
            bandwidth,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dims(&self) -> usize {
        self.observations.len()
    }

    /// Draws from the KDE (a random observation plus kernel noise), rounded
    /// to the nearest count and clamped at zero.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Matrix {
        let mut x = Matrix::zeros(n, self.dims());
        for i in 0..n {
            for (k, obs) in self.observations.iter().enumerate() {
                let centre = obs[rng.below(obs.len())];
                x.row_mut(i)[k] = (centre + self.bandwidth * rng.normal()).round().max(0.0);
            }
        }
        x
    }
}

/// Independent sampling for counts: a bandwidth-0.75 KDE per code.
pub fn independent_sampling_count(
    data: &RecordDataset,
    n: usize,
    rng: &mut Rng,
) -> Result<RecordDataset> {
    data.require_kind(DataKind::Count)?;
    let kde = KdeModel::fit(data, KDE_BANDWIDTH)?;
    RecordDataset::new(
        kde.sample(n, rng),
        DataKind::Count,
        data.vocabulary().clone(),
    )
}

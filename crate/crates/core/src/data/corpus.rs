use serde::{Deserialize, Serialize};

use super::{CodeVocabulary, DataKind, RecordDataset};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Upper bound applied to sampled Poisson counts.
pub const DEFAULT_COUNT_CAP: u64 = 100;

const MAX_ENUMERATED_FACTORS: usize = 16;

/// Latent-factor model that stands in for a real patient population.
///
/// Each record switches latent factors on independently; an active factor
/// adds its loadings to the per-code log-odds (binary) or log-rate (count).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthModel {
    pub kind: DataKind,
    /// Probability that each factor is active in a record.
    pub factor_probs: Vec<f64>,
    /// `loadings[code][factor]`.
    pub loadings: Vec<Vec<f64>>,
    /// Base log-odds (binary) or log-rate (count) per code.
    pub base: Vec<f64>,
    pub count_cap: u64,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    crate::numerics::Activation::Sigmoid.apply(x)
}

impl GroundTruthModel {
    /// Codes are mutually independent with marginals `probs`.
    pub fn independent_binary(probs: &[f64]) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::invalid(format!("marginal {p} must lie in (0, 1)")));
        }
        Ok(GroundTruthModel {
            kind: DataKind::Binary,
            factor_probs: Vec::new(),
            loadings: vec![Vec::new(); probs.len()],
            base: probs.iter().map(|&p| logit(p)).collect(),
            count_cap: DEFAULT_COUNT_CAP,
        })
    }

    /// A random model with `factors` latent factors over `codes` codes.
    ///
    /// With no factors and binary kind, marginals are drawn from
    /// `U(0.05, 0.6)`. Otherwise each factor loads on a random block of
    /// roughly `codes / factors` codes with strong positive loadings on top
    /// of sparse base rates.
    pub fn random(codes: usize, factors: usize, kind: DataKind, rng: &mut Rng) -> Self {
        let mut loadings = vec![vec![0.0; factors]; codes];
        let factor_probs: Vec<f64> = (0..factors).map(|_| rng.uniform_range(0.15, 0.4)).collect();
        let base: Vec<f64> = match (kind, factors) {
            (DataKind::Binary, 0) => (0..codes)
                .map(|_| logit(rng.uniform_range(0.05, 0.6)))
                .collect(),
            (DataKind::Binary, _) => (0..codes)
                .map(|_| logit(rng.uniform_range(0.03, 0.25)))
                .collect(),
            (DataKind::Count, _) => (0..codes)
                .map(|_| rng.uniform_range(0.1, 1.5).ln())
                .collect(),
        };
        if factors > 0 {
            let block = (codes / factors).max(2).min(codes);
            for f in 0..factors {
                for c in rng.sample_indices(codes, block) {
                    loadings[c][f] = match kind {
                        DataKind::Binary => rng.uniform_range(1.5, 3.0),
                        DataKind::Count => rng.uniform_range(0.5, 1.5),
                    };
                }
            }
        }
        GroundTruthModel {
            kind,
            factor_probs,
            loadings,
            base,
            count_cap: DEFAULT_COUNT_CAP,
        }
    }

    pub fn codes(&self) -> usize {
        self.base.len()
    }

    pub fn factors(&self) -> usize {
        self.factor_probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.loadings.len() != self.codes() {
            return Err(Error::invalid("loadings must have one row per code"));
        }
        if self.loadings.iter().any(|r| r.len() != self.factors()) {
            return Err(Error::invalid(
                "loading rows must have one entry per factor",
            ));
        }
        if self.factor_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("factor probabilities must lie in [0, 1]"));
        }
        if self
            .loadings
            .iter()
            .flatten()
            .chain(&self.base)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("loadings and base rates must be finite"));
        }
        Ok(())
    }

    fn linear_predictor(&self, code: usize, active: &[bool]) -> f64 {
        self.base[code]
            + self.loadings[code]
                .iter()
                .zip(active)
                .filter(|(_, &on)| on)
                .map(|(l, _)| l)
                .sum::<f64>()
    }

    /// Exact per-code expectation (probability or capped mean count),
    /// enumerating all factor subsets.
    pub fn expected_means(&self) -> Result<Vec<f64>> {
        let l = self.factors();
        if l > MAX_ENUMERATED_FACTORS {
            return Err(Error::invalid(format!(
                "{l} factors is too many to enumerate (max {MAX_ENUMERATED_FACTORS})"
            )));
        }
        let mut means = vec![0.0; self.codes()];
        let mut active = vec![false; l];
        for mask in 0u32..(1 << l) {
            let mut weight = 1.0;
            for (f, on) in active.iter_mut().enumerate() {
                *on = mask & (1 << f) != 0;
                weight *= if *on {
                    self.factor_probs[f]
                } else {
                    1.0 - self.factor_probs[f]
                };
            }
            for (c, m) in means.iter_mut().enumerate() {
                let eta = self.linear_predictor(c, &active);
                *m += weight
                    * match self.kind {
                        DataKind::Binary => sigmoid(eta),
                        DataKind::Count => capped_poisson_mean(eta.exp(), self.count_cap),
                    };
            }
        }
        Ok(means)
    }
}

/// `E[min(X, cap)]` for `X ~ Poisson(rate)`, as `Σ_{j<cap} P(X > j)`.
fn capped_poisson_mean(rate: f64, cap: u64) -> f64 {
    let mut pmf = (-rate).exp();
    let mut cdf = pmf;
    let mut mean = 0.0;
    for j in 0..cap {
        mean += 1.0 - cdf;
        pmf *= rate / (j + 1) as f64;
        cdf += pmf;
    }
    mean
}

/// Samples `n` records from the ground-truth model.
pub fn synth_corpus(gt: &GroundTruthModel, n: usize, rng: &mut Rng) -> Result<RecordDataset> {
    gt.validate()?;
    let codes = gt.codes();
    let mut x = Matrix::zeros(n, codes);
    let mut active = vec![false; gt.factors()];
    for i in 0..n {
        for (on, &p) in active.iter_mut().zip(&gt.factor_probs) {
            *on = rng.bernoulli_draw(p);
        }
        let row = x.row_mut(i);
        for (c, v) in row.iter_mut().enumerate() {
            let eta = gt.linear_predictor(c, &active);
            *v = match gt.kind {
                DataKind::Binary => f64::from(u8::from(rng.bernoulli_draw(sigmoid(eta)))),
                DataKind::Count => rng.poisson(eta.exp()).min(gt.count_cap) as f64,
            };
        }
    }
    RecordDataset::new(x, gt.kind, CodeVocabulary::numbered(codes))
}

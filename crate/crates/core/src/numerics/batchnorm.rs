use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Moving-average decay for the running statistics.
pub const BN_DECAY: f64 = 0.99;
/// Added to the variance inside the square root.
pub const BN_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnMode {
    /// Normalise with batch statistics and update the moving averages.
    Train,
    /// Normalise with the moving averages; a pure function of the state.
    Infer,
}

/// Per-feature scale/shift plus running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub moving_mean: Vec<f64>,
    pub moving_var: Vec<f64>,
    pub decay: f64,
    pub eps: f64,
}

/// Values saved by the forward pass for [`BatchNormState::backward`].
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    x_hat: Matrix,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
    batch_stats: bool,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        BatchNormState {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            moving_mean: vec![0.0; features],
            moving_var: vec![1.0; features],
            decay: BN_DECAY,
            eps: BN_EPS,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Matrix, mode: BnMode) -> Result<(Matrix, BatchNormCache)> {
        let f = self.features();
        if x.cols() != f {
            return Err(Error::Shape {
                op: "batchnorm_forward",
                left: x.shape(),
                right: (1, f),
            });
        }
        let (mean, var) = match mode {
            BnMode::Train => {
                if x.rows() < 2 {
                    return Err(Error::invalid(
                        "batch normalization in train mode needs at least 2 rows",
                    ));
                }
                let (mean, var) = column_moments(x);
                for j in 0..f {
                    self.moving_mean[j] =
                        self.decay * self.moving_mean[j] + (1.0 - self.decay) * mean[j];
                    self.moving_var[j] =
                        self.decay * self.moving_var[j] + (1.0 - self.decay) * var[j];
                }
                (mean, var)
            }
            BnMode::Infer => (self.moving_mean.clone(), self.moving_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = x.clone();
        let mut out = Matrix::zeros(x.rows(), f);
        for i in 0..x.rows() {
            let xr = x_hat.row_mut(i);
            for j in 0..f {
                xr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
            let or = out.row_mut(i);
            for j in 0..f {
                or[j] = self.gamma[j] * xr[j] + self.beta[j];
            }
        }
        let cache = BatchNormCache {
            x_hat,
            inv_std,
            gamma: self.gamma.clone(),
            batch_stats: mode == BnMode::Train,
        };
        Ok((out, cache))
    }

    /// Infer-mode forward that leaves the state untouched.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let mut scratch = self.clone();
        scratch.forward(x, BnMode::Infer).map(|(y, _)| y)
    }

    /// Returns `(grad_x, grad_gamma, grad_beta)`.
    pub fn backward(cache: &BatchNormCache, upstream: &Matrix) -> (Matrix, Vec<f64>, Vec<f64>) {
        let (m, f) = upstream.shape();
        let mut grad_gamma = vec![0.0; f];
        let mut grad_beta = vec![0.0; f];
        for i in 0..m {
            let g = upstream.row(i);
            let xh = cache.x_hat.row(i);
            for j in 0..f {
                grad_gamma[j] += g[j] * xh[j];
                grad_beta[j] += g[j];
            }
        }
        let mut grad_x = Matrix::zeros(m, f);
        if cache.batch_stats {
            // dx = γ·inv_std/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
            let n = m as f64;
            for i in 0..m {
                let g = upstream.row(i);
                let xh = cache.x_hat.row(i);
                let out = grad_x.row_mut(i);
                for j in 0..f {
                    out[j] = cache.gamma[j] * cache.inv_std[j] / n
                        * (n * g[j] - grad_beta[j] - xh[j] * grad_gamma[j]);
                }
            }
        } else {
            for i in 0..m {
                let g = upstream.row(i);
                let out = grad_x.row_mut(i);
                for j in 0..f {
                    out[j] = g[j] * cache.gamma[j] * cache.inv_std[j];
                }
            }
        }
        (grad_x, grad_gamma, grad_beta)
    }
}

/// Column means and biased (1/m) variances.
fn column_moments(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mean = x.column_means();
    let mut var = vec![0.0; x.cols()];
    for r in x.row_iter() {
        for j in 0..r.len() {
            let d = r[j] - mean[j];
            var[j] += d * d;
        }
    }
    let n = x.rows() as f64;
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

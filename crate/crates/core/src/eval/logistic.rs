use log::warn;

use crate::error::{Error, Result};
use crate::numerics::{AdamState, Direction, Matrix};

pub const DEFAULT_L2: f64 = 1e-3;
pub const LR_LEARNING_RATE: f64 = 0.01;
pub const LR_MAX_ITERATIONS: usize = 5000;
pub const LR_GRAD_TOLERANCE: f64 = 1e-5;

/// L2-regularised logistic regression with an unpenalised intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    /// True when the labels had a single class and the model is a constant.
    pub constant: bool,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &Matrix) -> Vec<f64> {
        assert_eq!(x.cols(), self.weights.len(), "feature width");
        x.row_iter()
            .map(|r| {
                sigmoid(self.bias + r.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
            })
            .collect()
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Mean cross entropy plus `l2 / 2 * |w|^2`, and its gradient
/// `(grad_w, grad_b)`.
pub fn logistic_loss_and_grad(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    b: f64,
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = x.rows().max(1) as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (r, &t) in x.row_iter().zip(y) {
        let z = b + r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        // log(1 + e^z) - t z, computed stably
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
        let d = sigmoid(z) - t;
        gb += d;
        gw.iter_mut().zip(r).for_each(|(g, &a)| *g += d * a);
    }
    let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * 0.5 * l2;
    gw.iter_mut()
        .zip(w)
        .for_each(|(g, &v)| *g = *g / n + l2 * v);
    (loss / n + reg, gw, gb / n)
}

fn check_labels(rows: usize, y: &[f64]) -> Result<()> {
    if rows != y.len() {
        return Err(Error::invalid(format!(
            "{rows} feature rows but {} labels",
            y.len()
        )));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    Ok(())
}

/// Fits one model by full-batch Adam from zero weights. A single-class label
/// vector yields a constant predictor (flagged in the model).
pub fn train_logistic_regression(x: &Matrix, y: &[f64], l2: f64) -> Result<LogisticModel> {
    check_labels(x.rows(), y)?;
    let labels = Matrix::from_vec(y.len(), 1, y.to_vec())?;
    let mut fits = fit_batch(x, &labels, &[None], l2);
    Ok(fits.pop().expect("one model"))
}

/// Fits one model per column of `labels` on shared features `x`. For column
/// `k`, feature `mask[k]` (if any) is held at zero weight and dropped from the
/// returned weights. Columns converge and stop updating independently.
pub(crate) fn fit_batch(
    x: &Matrix,
    labels: &Matrix,
    mask: &[Option<usize>],
    l2: f64,
) -> Vec<LogisticModel> {
    let (n, c) = x.shape();
    let k = labels.cols();
    assert_eq!(mask.len(), k);
    let nf = n.max(1) as f64;
    let means = labels.column_means();
    let constant: Vec<bool> = means
        .iter()
        .map(|&p| n == 0 || p == 0.0 || p == 1.0)
        .collect();

    let mut w = Matrix::zeros(c, k);
    let mut b = vec![0.0; k];
    let mut w_opt: Vec<AdamState> = (0..k)
        .map(|_| AdamState::new(c, LR_LEARNING_RATE))
        .collect();
    let mut b_opt: Vec<AdamState> = (0..k)
        .map(|_| AdamState::new(1, LR_LEARNING_RATE))
        .collect();
    let mut active: Vec<bool> = constant.iter().map(|&cst| !cst).collect();
    let mut iterations = vec![0usize; k];

    let mut col_w = vec![0.0; c];
    let mut col_g = vec![0.0; c];
    for _ in 0..LR_MAX_ITERATIONS {
        if !active.iter().any(|&a| a) {
            break;
        }
        // only the still-active columns are recomputed
        let cols: Vec<usize> = (0..k).filter(|&j| active[j]).collect();
        let mut w_act = Matrix::zeros(c, cols.len());
        for f in 0..c {
            for (jj, &j) in cols.iter().enumerate() {
                w_act[(f, jj)] = w[(f, j)];
            }
        }
        let mut resid = x.matmul(&w_act).expect("feature width");
        for i in 0..n {
            let (row, r) = (labels.row(i), resid.row_mut(i));
            for (jj, &j) in cols.iter().enumerate() {
                r[jj] = sigmoid(r[jj] + b[j]) - row[j];
            }
        }
        let gw = x.t_matmul(&resid).expect("rows agree");
        let gb = resid.column_sums();
        for (jj, &j) in cols.iter().enumerate() {
            for f in 0..c {
                col_w[f] = w[(f, j)];
                col_g[f] = if mask[j] == Some(f) {
                    0.0
                } else {
                    gw[(f, jj)] / nf + l2 * col_w[f]
                };
            }
            let g_b = gb[jj] / nf;
            let norm = col_g.iter().fold(g_b.abs(), |m, v| m.max(v.abs()));
            if norm < LR_GRAD_TOLERANCE {
                active[j] = false;
                continue;
            }
            w_opt[j]
                .step_slice(&mut col_w, &col_g, Direction::Descend)
                .expect("lengths");
            let mut bj = [b[j]];
            b_opt[j]
                .step_slice(&mut bj, &[g_b], Direction::Descend)
                .expect("lengths");
            b[j] = bj[0];
            for f in 0..c {
                w.as_mut_slice()[f * k + j] = col_w[f];
            }
            iterations[j] += 1;
        }
    }

    (0..k)
        .map(|j| {
            let weights: Vec<f64> = (0..c)
                .filter(|&f| mask[j] != Some(f))
                .map(|f| w[(f, j)])
                .collect();
            if constant[j] {
                warn!("single-class labels for model {j}; using a constant predictor");
                let p = means[j].clamp(1e-8, 1.0 - 1e-8);
                return LogisticModel {
                    weights: vec![0.0; weights.len()],
                    bias: (p / (1.0 - p)).ln(),
                    l2,
                    constant: true,
                    iterations: 0,
                };
            }
            LogisticModel {
                weights,
                bias: b[j],
                l2,
                constant: false,
                iterations: iterations[j],
            }
        })
        .collect()
}

/// F1 of the positive class with predictions thresholded at `threshold`
/// (`p >= threshold` counts as positive). Zero when precision and recall are
/// both zero.
pub fn f1_score(predictions: &[f64], labels: &[f64], threshold: f64) -> f64 {
    assert_eq!(
        predictions.len(),
        labels.len(),
        "prediction and label lengths"
    );
    let (mut tp, mut fp, mut fne) = (0.0, 0.0, 0.0);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p >= threshold, y > 0.5) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fne += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fne)
    }
}

use super::autoencoder::LOG_FLOOR;
use crate::error::{Error, Result};
use crate::numerics::{Activation, Dense, DenseAdam, DenseGrads, Direction, Matrix, Rng};

/// Feedforward classifier `ReLU → … → ReLU → sigmoid`.
///
/// With minibatch averaging the input of every sample is the sample itself
/// concatenated with the mean of the minibatch it belongs to, so the first
/// layer is `2|C|` wide.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub layers: Vec<Dense>,
    pub minibatch_averaging: bool,
    codes: usize,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct DiscriminatorCache {
    /// Stacked samples of every segment.
    samples: Matrix,
    /// Row ranges and minibatch averages (empty without averaging).
    segments: Vec<(usize, usize, Vec<f64>)>,
    /// Output of each layer; the last holds the probabilities as `m x 1`.
    outputs: Vec<Matrix>,
}

impl DiscriminatorCache {
    pub fn probabilities(&self) -> &[f64] {
        self.outputs.last().expect("non-empty cache").as_slice()
    }
}

/// Mean of the rows of `batch`.
pub fn batch_average(batch: &Matrix) -> Vec<f64> {
    batch.column_means()
}

impl Discriminator {
    pub fn new(codes: usize, hidden: &[usize], minibatch_averaging: bool, rng: &mut Rng) -> Self {
        let input = if minibatch_averaging {
            2 * codes
        } else {
            codes
        };
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Discriminator {
            layers: widths
                .windows(2)
                .map(|w| Dense::new(w[0], w[1], rng))
                .collect(),
            minibatch_averaging,
            codes,
        }
    }

    pub fn codes(&self) -> usize {
        self.codes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    fn check(&self, batch: &Matrix, average: Option<&[f64]>) -> Result<()> {
        if batch.cols() != self.codes {
            return Err(Error::Shape {
                op: "discriminator_forward",
                left: batch.shape(),
                right: (self.input_dim(), self.layers[0].fan_out()),
            });
        }
        match (self.minibatch_averaging, average) {
            (true, Some(avg)) if avg.len() != self.codes => Err(Error::Shape {
                op: "discriminator_forward",
                left: (1, avg.len()),
                right: (1, self.codes),
            }),
            (true, Some(_)) | (false, None) => Ok(()),
            (true, None) => Err(Error::invalid(
                "minibatch averaging is on but no batch average was given",
            )),
            (false, Some(_)) => Err(Error::invalid(
                "batch average given but minibatch averaging is off",
            )),
        }
    }

    /// The network input as a matrix: each row of `batch`, followed by
    /// `average` when minibatch averaging is on.
    pub fn assemble(&self, batch: &Matrix, average: Option<&[f64]>) -> Result<Matrix> {
        self.check(batch, average)?;
        match average {
            Some(avg) => {
                let mut broadcast = Matrix::zeros(batch.rows(), self.codes);
                for i in 0..batch.rows() {
                    broadcast.row_mut(i).copy_from_slice(avg);
                }
                batch.hstack(&broadcast)
            }
            None => Ok(batch.clone()),
        }
    }

    /// Forward pass over several batches at once, each with its own average.
    /// The average half of the first layer is applied as one row vector per
    /// batch instead of being broadcast through the matrix product.
    fn forward_parts(&self, parts: &[(&Matrix, Option<&[f64]>)]) -> Result<DiscriminatorCache> {
        let mut samples = Matrix::zeros(0, self.codes);
        let mut segments = Vec::new();
        for (batch, avg) in parts {
            self.check(batch, *avg)?;
            let start = samples.rows();
            samples = if start == 0 {
                (*batch).clone()
            } else {
                samples.vstack(batch)?
            };
            if let Some(avg) = avg {
                segments.push((start, samples.rows(), avg.to_vec()));
            }
        }
        let first = &self.layers[0];
        let mut pre = if self.minibatch_averaging {
            let top = first.weight.row_range(0, self.codes);
            let bottom = first.weight.row_range(self.codes, 2 * self.codes);
            let mut pre = samples.matmul(&top)?;
            for (start, end, avg) in &segments {
                let shift = Matrix::row_vector(avg).matmul(&bottom)?;
                for i in *start..*end {
                    pre.row_mut(i)
                        .iter_mut()
                        .zip(shift.as_slice())
                        .for_each(|(p, s)| *p += s);
                }
            }
            pre
        } else {
            samples.matmul(&first.weight)?
        };
        pre.add_row_broadcast(&first.bias)?;
        let last = self.layers.len() - 1;
        let act = |k: usize| {
            if k == last {
                Activation::Sigmoid
            } else {
                Activation::Relu
            }
        };
        let mut outputs = Vec::with_capacity(self.layers.len());
        outputs.push(act(0).forward_owned(pre));
        for k in 1..self.layers.len() {
            let next = act(k).forward_owned(self.layers[k].forward(&outputs[k - 1]));
            outputs.push(next);
        }
        Ok(DiscriminatorCache {
            samples,
            segments,
            outputs,
        })
    }

    /// One probability per row of `batch`.
    pub fn forward(
        &self,
        batch: &Matrix,
        average: Option<&[f64]>,
    ) -> Result<(Vec<f64>, DiscriminatorCache)> {
        let cache = self.forward_parts(&[(batch, average)])?;
        Ok((cache.probabilities().to_vec(), cache))
    }

    /// Backpropagates `d objective / d logit` per row. Returns the parameter
    /// gradients (if requested) and the gradient w.r.t. the samples (if
    /// requested). With averaging, each sample's gradient includes `1/m` of
    /// its batch's summed gradient on the average half of the input.
    pub fn backward(
        &self,
        cache: &DiscriminatorCache,
        grad_logits: &[f64],
        want_params: bool,
        want_input: bool,
    ) -> (Option<Vec<DenseGrads>>, Option<Matrix>) {
        let n = self.layers.len();
        let mut g = Matrix::from_vec(grad_logits.len(), 1, grad_logits.to_vec())
            .expect("one logit per row");
        let mut grads: Vec<DenseGrads> = Vec::with_capacity(n);
        for k in (1..n).rev() {
            let input = &cache.outputs[k - 1];
            if want_params {
                grads.push(self.layers[k].param_grads(input, &g));
            }
            g = Activation::Relu.backward_owned(input, self.layers[k].input_grad(&g));
        }
        let first = &self.layers[0];
        let c = self.codes;
        // gradient summed over each segment's rows, for the average half
        let seg_sums: Vec<Vec<f64>> = cache
            .segments
            .iter()
            .map(|&(start, end, _)| {
                let mut sums = vec![0.0; g.cols()];
                for i in start..end {
                    sums.iter_mut().zip(g.row(i)).for_each(|(s, v)| *s += v);
                }
                sums
            })
            .collect();
        if want_params {
            let top = cache.samples.t_matmul(&g).expect("layer shapes");
            let weight = if self.minibatch_averaging {
                let mut bottom = Matrix::zeros(c, first.fan_out());
                for ((_, _, avg), sums) in cache.segments.iter().zip(&seg_sums) {
                    for (i, &a) in avg.iter().enumerate() {
                        bottom
                            .row_mut(i)
                            .iter_mut()
                            .zip(sums)
                            .for_each(|(b, s)| *b += a * s);
                    }
                }
                top.vstack(&bottom).expect("layer shapes")
            } else {
                top
            };
            grads.push(DenseGrads {
                weight,
                bias: g.column_sums(),
            });
        }
        grads.reverse();
        let input = want_input.then(|| {
            if !self.minibatch_averaging {
                return first.input_grad(&g);
            }
            let top = first.weight.row_range(0, c);
            let bottom = first.weight.row_range(c, 2 * c);
            let mut out = g.matmul_t(&top).expect("layer shapes");
            for ((start, end, _), sums) in cache.segments.iter().zip(&seg_sums) {
                let share = Matrix::row_vector(sums)
                    .matmul_t(&bottom)
                    .expect("layer shapes");
                let m = (end - start) as f64;
                for i in *start..*end {
                    out.row_mut(i)
                        .iter_mut()
                        .zip(share.as_slice())
                        .for_each(|(o, s)| *o += s / m);
                }
            }
            out
        });
        (want_params.then_some(grads), input)
    }

    fn average_of(&self, batch: &Matrix) -> Option<Vec<f64>> {
        self.minibatch_averaging.then(|| batch_average(batch))
    }
}

#[inline]
fn log_clamped(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// `(1/m_r) Σ log D(x) + (1/m_f) Σ log(1 − D(x_z))`, the quantity the
/// discriminator ascends, with minibatch averages taken over each batch.
pub fn discriminator_objective(d: &Discriminator, real: &Matrix, fake: &Matrix) -> Result<f64> {
    discriminator_objective_and_grads(d, real, fake).map(|(v, _)| v)
}

/// `(1/m) Σ log D(x_z)`, the quantity the generator and decoder ascend.
pub fn generator_objective(d: &Discriminator, fake: &Matrix) -> Result<f64> {
    let (p, _) = d.forward(fake, d.average_of(fake).as_deref())?;
    Ok(p.iter().map(|&v| log_clamped(v)).sum::<f64>() / p.len() as f64)
}

pub fn discriminator_objective_and_grads(
    d: &Discriminator,
    real: &Matrix,
    fake: &Matrix,
) -> Result<(f64, Vec<DenseGrads>)> {
    if real.rows() == 0 || fake.rows() == 0 {
        return Err(Error::invalid(
            "discriminator objective needs non-empty batches",
        ));
    }
    let (real_avg, fake_avg) = (d.average_of(real), d.average_of(fake));
    let (mr, mf) = (real.rows(), fake.rows());
    let cache = d.forward_parts(&[(real, real_avg.as_deref()), (fake, fake_avg.as_deref())])?;
    let p = cache.probabilities();
    let mut objective = 0.0;
    let mut grad_logits = Vec::with_capacity(mr + mf);
    for &v in &p[..mr] {
        objective += log_clamped(v) / mr as f64;
        grad_logits.push(if v > LOG_FLOOR {
            (1.0 - v) / mr as f64
        } else {
            0.0
        });
    }
    for &v in &p[mr..] {
        objective += log_clamped(1.0 - v) / mf as f64;
        grad_logits.push(if 1.0 - v > LOG_FLOOR {
            -v / mf as f64
        } else {
            0.0
        });
    }
    let (grads, _) = d.backward(&cache, &grad_logits, true, false);
    Ok((objective, grads.expect("requested")))
}

/// Generator objective and its gradient w.r.t. the fake samples, including
/// the path through the minibatch average.
pub fn generator_objective_and_sample_grad(
    d: &Discriminator,
    fake: &Matrix,
) -> Result<(f64, Matrix)> {
    let m = fake.rows();
    if m == 0 {
        return Err(Error::invalid(
            "generator objective needs a non-empty batch",
        ));
    }
    let (p, cache) = d.forward(fake, d.average_of(fake).as_deref())?;
    let objective = p.iter().map(|&v| log_clamped(v)).sum::<f64>() / m as f64;
    let grad_logits: Vec<f64> = p
        .iter()
        .map(|&v| {
            if v > LOG_FLOOR {
                (1.0 - v) / m as f64
            } else {
                0.0
            }
        })
        .collect();
    let (_, g_in) = d.backward(&cache, &grad_logits, false, true);
    Ok((objective, g_in.expect("requested")))
}

/// Adam state for every discriminator layer.
#[derive(Clone, Debug)]
pub struct DiscriminatorAdam {
    layers: Vec<DenseAdam>,
}

impl DiscriminatorAdam {
    pub fn new(d: &Discriminator, learning_rate: f64) -> Self {
        DiscriminatorAdam {
            layers: d
                .layers
                .iter()
                .map(|l| DenseAdam::new(l, learning_rate))
                .collect(),
        }
    }

    pub fn step(&mut self, d: &mut Discriminator, grads: &[DenseGrads], dir: Direction) {
        for ((opt, layer), g) in self.layers.iter_mut().zip(&mut d.layers).zip(grads) {
            opt.step(layer, g, dir);
        }
    }
}

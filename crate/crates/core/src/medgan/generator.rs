use crate::data::DataKind;
use crate::error::{Error, Result};
use crate::numerics::{
    Activation, AdamState, BatchNormCache, BatchNormState, BnMode, Direction, Matrix, Rng,
};

/// One shortcut layer: `x_k = act(BN(x_{k-1}·W)) + x_{k-1}`. No bias; the
/// batch-norm shift plays that role.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorLayer {
    pub weight: Matrix,
    pub bn: BatchNormState,
}

/// Stack of square shortcut layers mapping the prior to the code space.
/// Hidden layers use ReLU; the last uses tanh (binary) or ReLU (count).
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub kind: DataKind,
    pub layers: Vec<GeneratorLayer>,
}

#[derive(Clone, Debug)]
struct LayerCache {
    input: Matrix,
    bn: BatchNormCache,
    activated: Matrix,
    act: Activation,
}

/// Intermediate values of a forward pass, consumed by [`Generator::backward`].
#[derive(Clone, Debug)]
pub struct GeneratorCache {
    layers: Vec<LayerCache>,
}

#[derive(Clone, Debug)]
pub struct GeneratorGrads {
    pub weights: Vec<Matrix>,
    pub gammas: Vec<Vec<f64>>,
    pub betas: Vec<Vec<f64>>,
    pub input: Matrix,
}

fn output_activation(kind: DataKind) -> Activation {
    match kind {
        DataKind::Binary => Activation::Tanh,
        DataKind::Count => Activation::Relu,
    }
}

impl Generator {
    pub fn new(width: usize, layers: usize, kind: DataKind, rng: &mut Rng) -> Self {
        Generator {
            kind,
            layers: (0..layers)
                .map(|_| GeneratorLayer {
                    weight: rng.glorot_uniform(width, width),
                    bn: BatchNormState::new(width),
                })
                .collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            output_activation(self.kind)
        } else {
            Activation::Relu
        }
    }

    fn check_input(&self, z: &Matrix) -> Result<()> {
        if z.cols() != self.width() {
            return Err(Error::Shape {
                op: "generator_forward",
                left: z.shape(),
                right: (self.width(), self.width()),
            });
        }
        Ok(())
    }

    /// Forward pass. Train mode uses batch statistics and updates the moving
    /// averages, so it needs at least two rows.
    pub fn forward(&mut self, z: &Matrix, mode: BnMode) -> Result<(Matrix, GeneratorCache)> {
        self.check_input(z)?;
        let mut x = z.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for k in 0..self.layers.len() {
            let act = self.activation(k);
            let layer = &mut self.layers[k];
            let h = x.matmul(&layer.weight)?;
            let (normed, bn) = layer.bn.forward(&h, mode)?;
            let activated = act.forward_owned(normed);
            let next = activated.add(&x)?;
            caches.push(LayerCache {
                input: x,
                bn,
                activated,
                act,
            });
            x = next;
        }
        Ok((x, GeneratorCache { layers: caches }))
    }

    /// Inference with the moving statistics; does not touch the state.
    pub fn infer(&self, z: &Matrix) -> Result<Matrix> {
        self.check_input(z)?;
        let mut x = z.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let h = x.matmul(&layer.weight)?;
            let normed = layer.bn.infer(&h)?;
            let mut y = self.activation(k).forward_owned(normed);
            y.add_assign(&x)?;
            x = y;
        }
        Ok(x)
    }

    pub fn backward(&self, cache: &GeneratorCache, grad_out: &Matrix) -> GeneratorGrads {
        let n = self.layers.len();
        let mut weights = vec![Matrix::zeros(0, 0); n];
        let mut gammas = vec![Vec::new(); n];
        let mut betas = vec![Vec::new(); n];
        let mut g = grad_out.clone();
        for k in (0..n).rev() {
            let c = &cache.layers[k];
            let g_normed = c.act.backward_from_output(&c.activated, &g);
            let (g_h, g_gamma, g_beta) = BatchNormState::backward(&c.bn, &g_normed);
            weights[k] = c.input.t_matmul(&g_h).expect("generator backward shapes");
            gammas[k] = g_gamma;
            betas[k] = g_beta;
            // shortcut: the upstream gradient flows to the input unchanged
            let through = g_h
                .matmul_t(&self.layers[k].weight)
                .expect("generator backward shapes");
            g.add_assign(&through).expect("generator backward shapes");
        }
        GeneratorGrads {
            weights,
            gammas,
            betas,
            input: g,
        }
    }
}

/// Free-function form of [`Generator::forward`].
pub fn generator_forward(g: &mut Generator, z: &Matrix, mode: BnMode) -> Result<Matrix> {
    g.forward(z, mode).map(|(x, _)| x)
}

/// Adam state for every generator parameter.
#[derive(Clone, Debug)]
pub struct GeneratorAdam {
    weights: Vec<AdamState>,
    gammas: Vec<AdamState>,
    betas: Vec<AdamState>,
}

impl GeneratorAdam {
    pub fn new(g: &Generator, learning_rate: f64) -> Self {
        GeneratorAdam {
            weights: g
                .layers
                .iter()
                .map(|l| AdamState::for_matrix(&l.weight, learning_rate))
                .collect(),
            gammas: g
                .layers
                .iter()
                .map(|l| AdamState::new(l.bn.features(), learning_rate))
                .collect(),
            betas: g
                .layers
                .iter()
                .map(|l| AdamState::new(l.bn.features(), learning_rate))
                .collect(),
        }
    }

    pub fn step(&mut self, g: &mut Generator, grads: &GeneratorGrads, dir: Direction) {
        for (k, layer) in g.layers.iter_mut().enumerate() {
            self.weights[k]
                .step(&mut layer.weight, &grads.weights[k], dir)
                .expect("generator grads");
            self.gammas[k]
                .step_slice(&mut layer.bn.gamma, &grads.gammas[k], dir)
                .expect("generator grads");
            self.betas[k]
                .step_slice(&mut layer.bn.beta, &grads.betas[k], dir)
                .expect("generator grads");
        }
    }
}

use super::{AdamState, Direction, Matrix, Rng};

/// Fully connected layer `y = x·W + b` with `W: in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Parameter gradients of a [`Dense`] layer.
#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Dense {
            weight: rng.glorot_uniform(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    /// Panics on a width mismatch; callers validate shapes at their boundary.
    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&self.weight).expect("dense input width");
        y.add_row_broadcast(&self.bias).expect("bias width");
        y
    }

    pub fn param_grads(&self, input: &Matrix, grad_out: &Matrix) -> DenseGrads {
        DenseGrads {
            weight: input.t_matmul(grad_out).expect("dense backward shapes"),
            bias: grad_out.column_sums(),
        }
    }

    pub fn input_grad(&self, grad_out: &Matrix) -> Matrix {
        grad_out
            .matmul_t(&self.weight)
            .expect("dense backward shapes")
    }

    pub fn zero_grads(&self) -> DenseGrads {
        DenseGrads {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }
}

impl DenseGrads {
    pub fn accumulate(&mut self, other: &DenseGrads) {
        self.weight.add_assign(&other.weight).expect("same layer");
        self.bias
            .iter_mut()
            .zip(&other.bias)
            .for_each(|(a, b)| *a += b);
    }
}

/// Adam state for both parameter blocks of a [`Dense`] layer.
#[derive(Clone, Debug)]
pub struct DenseAdam {
    weight: AdamState,
    bias: AdamState,
}

impl DenseAdam {
    pub fn new(layer: &Dense, learning_rate: f64) -> Self {
        DenseAdam {
            weight: AdamState::for_matrix(&layer.weight, learning_rate),
            bias: AdamState::new(layer.bias.len(), learning_rate),
        }
    }

    pub fn step(&mut self, layer: &mut Dense, grads: &DenseGrads, dir: Direction) {
        self.weight
            .step(&mut layer.weight, &grads.weight, dir)
            .expect("gradient matches layer");
        self.bias
            .step_slice(&mut layer.bias, &grads.bias, dir)
            .expect("gradient matches layer");
    }
}

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{affine, Tensor};

/// Fully connected layer, `out = W·x + b` with `W: [m, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Tensor,
    pub bias: Tensor,
    pub frozen: bool,
}

impl Dense {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 2 || bias.rank() != 1 || weights.shape()[0] != bias.shape()[0] {
            return Err(Error::dim(format!(
                "dense: weights {:?} and bias {:?} are inconsistent",
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Dense {
            weights,
            bias,
            frozen: false,
        })
    }

    /// Uniform `±1/√n` weights, zero bias.
    pub fn init(inputs: usize, units: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Dense {
            weights: Tensor::uniform(vec![units, inputs], bound, rng),
            bias: Tensor::zeros(vec![units]),
            frozen: false,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn units(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 1 || x.len() != self.inputs() {
            return Err(Error::dim(format!(
                "dense layer expects [{}], got {:?}",
                self.inputs(),
                x.shape()
            )));
        }
        affine(&self.weights, x, &self.bias)
    }

    /// Returns `(∂L/∂x, [∂L/∂W, ∂L/∂b])`.
    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (m, n) = (self.units(), self.inputs());
        if grad_out.shape() != [m] {
            return Err(Error::dim(format!(
                "dense backward: grad shape {:?}, expected [{m}]",
                grad_out.shape()
            )));
        }
        let g = grad_out.data();
        let x = input.data();
        let w = self.weights.data();
        let mut grad_w = vec![0.0; m * n];
        let mut grad_x = vec![0.0; n];
        for i in 0..m {
            let gi = g[i];
            let row = &w[i * n..(i + 1) * n];
            let grow = &mut grad_w[i * n..(i + 1) * n];
            for j in 0..n {
                grow[j] = gi * x[j];
                grad_x[j] += gi * row[j];
            }
        }
        Ok((
            Tensor::new(vec![n], grad_x)?,
            vec![Tensor::new(vec![m, n], grad_w)?, grad_out.clone()],
        ))
    }
}

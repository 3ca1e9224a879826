use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ActivationKind {
    /// 1 for `x >= threshold`, else 0. Its derivative is taken to be 0
    /// everywhere, so it is usable for inference and perceptron demos only.
    Step {
        threshold: f64,
    },
    Relu,
    Sigmoid,
    Tanh,
    Linear,
}

impl ActivationKind {
    pub fn validate(&self) -> Result<()> {
        if let ActivationKind::Step { threshold } = self {
            if !threshold.is_finite() {
                return Err(Error::config("step threshold must be finite"));
            }
        }
        Ok(())
    }

    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            ActivationKind::Step { threshold } => {
                if x >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Linear => x,
        }
    }

    /// Derivative expressed through the input `x` and output `y = f(x)`.
    pub fn derivative(&self, x: f64, y: f64) -> f64 {
        match self {
            ActivationKind::Step { .. } => 0.0,
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Sigmoid => y * (1.0 - y),
            ActivationKind::Tanh => 1.0 - y * y,
            ActivationKind::Linear => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Step { .. } => "step",
            ActivationKind::Relu => "relu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Linear => "linear",
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub kind: ActivationKind,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        Activation { kind }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.map(|v| self.kind.apply(v))
    }

    pub fn backward(&self, input: &Tensor, output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.shape() != output.shape() {
            return Err(Error::dim(format!(
                "{} backward: grad shape {:?} vs output {:?}",
                self.kind.name(),
                grad_out.shape(),
                output.shape()
            )));
        }
        let data = input
            .data()
            .iter()
            .zip(output.data())
            .zip(grad_out.data())
            .map(|((&x, &y), &g)| g * self.kind.derivative(x, y))
            .collect();
        Tensor::new(input.shape().to_vec(), data)
    }
}

/// Softmax. A rank-1 input is normalized as a whole; a `[C,H,W]` input is
/// normalized across channels independently at every pixel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Softmax;

/// Max-shifted softmax over a contiguous slice (or a strided set of values).
fn softmax_strided(src: &[f64], dst: &mut [f64], start: usize, count: usize, stride: usize) {
    let mut max = f64::NEG_INFINITY;
    for i in 0..count {
        max = max.max(src[start + i * stride]);
    }
    let mut total = 0.0;
    for i in 0..count {
        let e = (src[start + i * stride] - max).exp();
        dst[start + i * stride] = e;
        total += e;
    }
    for i in 0..count {
        dst[start + i * stride] /= total;
    }
}

pub fn softmax(o: &Tensor) -> Tensor {
    let mut out = Tensor::zeros_like(o);
    softmax_strided(o.data(), out.data_mut(), 0, o.len(), 1);
    out
}

impl Softmax {
    fn groups(shape: &[usize]) -> Result<(usize, usize)> {
        match shape {
            [n] => Ok((*n, 1)),
            [c, h, w] => Ok((*c, h * w)),
            _ => Err(Error::dim(format!(
                "softmax expects a rank-1 or [C,H,W] input, got {shape:?}"
            ))),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (classes, pixels) = Self::groups(x.shape())?;
        let mut out = Tensor::zeros_like(x);
        for p in 0..pixels {
            softmax_strided(x.data(), out.data_mut(), p, classes, pixels);
        }
        Ok(out)
    }

    pub fn backward(&self, output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.shape() != output.shape() {
            return Err(Error::dim(format!(
                "softmax backward: grad shape {:?} vs output {:?}",
                grad_out.shape(),
                output.shape()
            )));
        }
        let (classes, pixels) = Self::groups(output.shape())?;
        let (p, g) = (output.data(), grad_out.data());
        let mut grad_in = Tensor::zeros_like(output);
        let gi = grad_in.data_mut();
        for px in 0..pixels {
            let dot: f64 = (0..classes)
                .map(|c| p[c * pixels + px] * g[c * pixels + px])
                .sum();
            for c in 0..classes {
                let i = c * pixels + px;
                gi[i] = p[i] * (g[i] - dot);
            }
        }
        Ok(grad_in)
    }
}

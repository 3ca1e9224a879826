//! Layers with paired forward and backward contracts.
//!
//! Every layer's `forward` returns a [`LayerCache`] holding what the matching
//! `backward` needs. A cache is consumed by exactly one backward call.

mod activation;
mod conv;
mod dense;
mod dropout;
mod pool;
mod reshape;

pub use activation::{sigmoid, softmax, Activation, ActivationKind, Softmax};
pub use conv::{conv_output_extent, Conv2d, ConvCache, DepthwiseSeparable, SeparableCache};
pub use dense::Dense;
pub use dropout::{Dropout, DropoutCache};
pub use pool::{Pool2d, PoolCache, PoolKind};
pub use reshape::{upsample_nearest, Flatten, Reshape, Upsample};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Training,
    Inference,
}

fn one() -> usize {
    1
}

/// Architecture-level description of a layer: its kind and hyperparameters,
/// without parameter values. Input extents are inferred from the preceding
/// layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    SeparableConv2d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Step {
        #[serde(default)]
        threshold: f64,
    },
    Relu,
    Sigmoid,
    Tanh,
    Linear,
    Softmax,
    MaxPool {
        size: usize,
        stride: usize,
    },
    AvgPool {
        size: usize,
        stride: usize,
    },
    Dropout {
        rate: f64,
    },
    Upsample {
        factor: usize,
    },
    Flatten,
    /// Reinterprets the input with a new shape of equal size, e.g. a decoder
    /// vector as a `[C,H,W]` image.
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn activation(kind: ActivationKind) -> Self {
        match kind {
            ActivationKind::Step { threshold } => LayerSpec::Step { threshold },
            ActivationKind::Relu => LayerSpec::Relu,
            ActivationKind::Sigmoid => LayerSpec::Sigmoid,
            ActivationKind::Tanh => LayerSpec::Tanh,
            ActivationKind::Linear => LayerSpec::Linear,
        }
    }

    pub fn activation_kind(&self) -> Option<ActivationKind> {
        Some(match *self {
            LayerSpec::Step { threshold } => ActivationKind::Step { threshold },
            LayerSpec::Relu => ActivationKind::Relu,
            LayerSpec::Sigmoid => ActivationKind::Sigmoid,
            LayerSpec::Tanh => ActivationKind::Tanh,
            LayerSpec::Linear => ActivationKind::Linear,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::SeparableConv2d { .. } => "separable_conv2d",
            LayerSpec::Step { .. } => "step",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Linear => "linear",
            LayerSpec::Softmax => "softmax",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::AvgPool { .. } => "avg_pool",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Upsample { .. } => "upsample",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Dense { units: 0 } => Err(Error::config("dense units must be positive")),
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                ..
            }
            | LayerSpec::SeparableConv2d {
                filters,
                kernel,
                stride,
                ..
            } if filters == 0 || kernel == 0 || stride == 0 => Err(Error::config(
                "conv filters, kernel and stride must be positive",
            )),
            LayerSpec::Step { threshold } if !threshold.is_finite() => {
                Err(Error::config("step threshold must be finite"))
            }
            LayerSpec::MaxPool { size, stride } | LayerSpec::AvgPool { size, stride }
                if size == 0 || stride == 0 =>
            {
                Err(Error::config("pool size and stride must be positive"))
            }
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(Error::config(format!("dropout rate {rate} outside [0, 1)")))
            }
            LayerSpec::Upsample { factor: 0 } => {
                Err(Error::config("upsample factor must be positive"))
            }
            LayerSpec::Reshape { ref shape } if shape.is_empty() || shape.contains(&0) => Err(
                Error::config(format!("reshape target {shape:?} needs positive extents")),
            ),
            _ => Ok(()),
        }
    }

    /// Shape inference.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let image = |what: &str| -> Result<(usize, usize, usize)> {
            match *input {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(Error::dim(format!("{what} expects [C,H,W], got {input:?}"))),
            }
        };
        match *self {
            LayerSpec::Dense { units } => match input {
                [_] => Ok(vec![units]),
                _ => Err(Error::dim(format!(
                    "dense expects a rank-1 input, got {input:?} (add a flatten layer)"
                ))),
            },
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                padding,
            }
            | LayerSpec::SeparableConv2d {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let (_, h, w) = image("conv")?;
                Ok(vec![
                    filters,
                    conv_output_extent(h, kernel, stride, padding)?,
                    conv_output_extent(w, kernel, stride, padding)?,
                ])
            }
            LayerSpec::MaxPool { size, stride } | LayerSpec::AvgPool { size, stride } => {
                let (c, h, w) = image("pool")?;
                Ok(vec![
                    c,
                    conv_output_extent(h, size, stride, 0)?,
                    conv_output_extent(w, size, stride, 0)?,
                ])
            }
            LayerSpec::Upsample { factor } => {
                let (c, h, w) = image("upsample")?;
                Ok(vec![c, h * factor, w * factor])
            }
            LayerSpec::Softmax => match input {
                [_] | [_, _, _] => Ok(input.to_vec()),
                _ => Err(Error::dim(format!(
                    "softmax expects a rank-1 or [C,H,W] input, got {input:?}"
                ))),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape { ref shape } => {
                if shape.iter().product::<usize>() == input.iter().product::<usize>() {
                    Ok(shape.clone())
                } else {
                    Err(Error::dim(format!("cannot reshape {input:?} to {shape:?}")))
                }
            }
            _ => Ok(input.to_vec()),
        }
    }

    pub fn param_count(&self, input: &[usize]) -> usize {
        match *self {
            LayerSpec::Dense { units } => units * input.iter().product::<usize>() + units,
            LayerSpec::Conv2d {
                filters, kernel, ..
            } => filters * input[0] * kernel * kernel + filters,
            LayerSpec::SeparableConv2d {
                filters, kernel, ..
            } => input[0] * kernel * kernel + input[0] + filters * input[0] + filters,
            _ => 0,
        }
    }

    /// Instantiates the layer for the given input shape, drawing fresh
    /// parameters from `rng`.
    pub fn build(&self, input: &[usize], rng: &mut SeededRng) -> Result<Layer> {
        self.output_shape(input)?;
        Ok(match *self {
            LayerSpec::Dense { units } => Layer::Dense(Dense::init(input[0], units, rng)),
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                padding,
            } => Layer::Conv2d(Conv2d::init(
                input[0], filters, kernel, stride, padding, rng,
            )?),
            LayerSpec::SeparableConv2d {
                filters,
                kernel,
                stride,
                padding,
            } => Layer::Separable(DepthwiseSeparable::init(
                input[0], filters, kernel, stride, padding, rng,
            )?),
            LayerSpec::Softmax => Layer::Softmax(Softmax),
            LayerSpec::MaxPool { size, stride } => {
                Layer::Pool(Pool2d::new(PoolKind::Max, size, stride)?)
            }
            LayerSpec::AvgPool { size, stride } => {
                Layer::Pool(Pool2d::new(PoolKind::Average, size, stride)?)
            }
            LayerSpec::Dropout { rate } => Layer::Dropout(Dropout::new(rate)?),
            LayerSpec::Upsample { factor } => Layer::Upsample(Upsample::new(factor)?),
            LayerSpec::Flatten => Layer::Flatten(Flatten),
            LayerSpec::Reshape { ref shape } => Layer::Reshape(Reshape {
                shape: shape.clone(),
            }),
            _ => Layer::Activation(Activation::new(
                self.activation_kind()
                    .expect("remaining variants are activations"),
            )),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Separable(DepthwiseSeparable),
    Activation(Activation),
    Softmax(Softmax),
    Pool(Pool2d),
    Dropout(Dropout),
    Upsample(Upsample),
    Flatten(Flatten),
    Reshape(Reshape),
}

/// Values saved by a forward call for its backward call.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Dense { input: Tensor },
    Conv(ConvCache),
    Separable(SeparableCache),
    Activation { input: Tensor, output: Tensor },
    Softmax { output: Tensor },
    Pool(PoolCache),
    Dropout(DropoutCache),
    Upsample { input_shape: Vec<usize> },
    Flatten { input_shape: Vec<usize> },
    Reshape { input_shape: Vec<usize> },
}

impl LayerCache {
    /// Appends the discrete choices made at nondifferentiable points (ReLU
    /// and step sides, max-pool winners). Two forward passes with equal
    /// signatures lie on the same smooth piece of the function.
    pub fn kink_signature(&self, out: &mut Vec<u64>) {
        match self {
            LayerCache::Activation { output, .. } => {
                // Step and ReLU outputs are zero exactly on the inactive side.
                out.extend(output.data().iter().map(|&y| u64::from(y != 0.0)));
            }
            LayerCache::Pool(p) => out.extend(p.argmax.iter().map(|&i| i as u64)),
            _ => {}
        }
    }
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense { units: d.units() },
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                filters: c.out_channels(),
                kernel: c.kernel().0,
                stride: c.stride,
                padding: c.padding,
            },
            Layer::Separable(s) => LayerSpec::SeparableConv2d {
                filters: s.out_channels(),
                kernel: s.kernel().0,
                stride: s.stride,
                padding: s.padding,
            },
            Layer::Activation(a) => LayerSpec::activation(a.kind),
            Layer::Softmax(_) => LayerSpec::Softmax,
            Layer::Pool(p) => match p.kind {
                PoolKind::Max => LayerSpec::MaxPool {
                    size: p.size,
                    stride: p.stride,
                },
                PoolKind::Average => LayerSpec::AvgPool {
                    size: p.size,
                    stride: p.stride,
                },
            },
            Layer::Dropout(d) => LayerSpec::Dropout { rate: d.rate },
            Layer::Upsample(u) => LayerSpec::Upsample { factor: u.factor },
            Layer::Flatten(_) => LayerSpec::Flatten,
            Layer::Reshape(r) => LayerSpec::Reshape {
                shape: r.shape.clone(),
            },
        }
    }

    pub fn name(&self) -> &'static str {
        self.spec().name()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(d) => {
                if input != [d.inputs()] {
                    return Err(Error::dim(format!(
                        "dense layer expects [{}], got {input:?}",
                        d.inputs()
                    )));
                }
                Ok(vec![d.units()])
            }
            Layer::Conv2d(c) => c.output_shape(input),
            Layer::Separable(s) => s.output_shape(input),
            other => other.spec().output_shape(input),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.weights, &d.bias],
            Layer::Conv2d(c) => vec![&c.filters, &c.bias],
            Layer::Separable(s) => vec![
                &s.depthwise,
                &s.depthwise_bias,
                &s.pointwise,
                &s.pointwise_bias,
            ],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.filters, &mut c.bias],
            Layer::Separable(s) => vec![
                &mut s.depthwise,
                &mut s.depthwise_bias,
                &mut s.pointwise,
                &mut s.pointwise_bias,
            ],
            _ => Vec::new(),
        }
    }

    /// Which entries of [`Layer::params`] are weights (as opposed to biases).
    /// Only weights enter the L2 penalty.
    pub fn weight_flags(&self) -> Vec<bool> {
        match self {
            Layer::Dense(_) | Layer::Conv2d(_) => vec![true, false],
            Layer::Separable(_) => vec![true, false, true, false],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn is_frozen(&self) -> bool {
        match self {
            Layer::Dense(d) => d.frozen,
            Layer::Conv2d(c) => c.frozen,
            Layer::Separable(s) => s.frozen,
            _ => false,
        }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        match self {
            Layer::Dense(d) => d.frozen = frozen,
            Layer::Conv2d(c) => c.frozen = frozen,
            Layer::Separable(s) => s.frozen = frozen,
            _ => {}
        }
    }

    pub fn forward(
        &self,
        x: &Tensor,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Tensor, LayerCache)> {
        Ok(match self {
            Layer::Dense(d) => (d.forward(x)?, LayerCache::Dense { input: x.clone() }),
            Layer::Conv2d(c) => {
                let (y, cache) = c.forward(x)?;
                (y, LayerCache::Conv(cache))
            }
            Layer::Separable(s) => {
                let (y, cache) = s.forward(x)?;
                (y, LayerCache::Separable(cache))
            }
            Layer::Activation(a) => {
                let y = a.forward(x);
                (
                    y.clone(),
                    LayerCache::Activation {
                        input: x.clone(),
                        output: y,
                    },
                )
            }
            Layer::Softmax(s) => {
                let y = s.forward(x)?;
                (y.clone(), LayerCache::Softmax { output: y })
            }
            Layer::Pool(p) => {
                let (y, cache) = p.forward(x)?;
                (y, LayerCache::Pool(cache))
            }
            Layer::Dropout(d) => {
                let (y, cache) = d.forward(x, mode, rng)?;
                (y, LayerCache::Dropout(cache))
            }
            Layer::Upsample(u) => (
                u.forward(x)?,
                LayerCache::Upsample {
                    input_shape: x.shape().to_vec(),
                },
            ),
            Layer::Flatten(_) => (
                x.flatten(),
                LayerCache::Flatten {
                    input_shape: x.shape().to_vec(),
                },
            ),
            Layer::Reshape(r) => (
                x.reshape(r.shape.clone())?,
                LayerCache::Reshape {
                    input_shape: x.shape().to_vec(),
                },
            ),
        })
    }

    /// Returns `(∂L/∂input, ∂L/∂params)`; parameterless layers return an
    /// empty parameter list.
    pub fn backward(&self, cache: LayerCache, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        match (self, cache) {
            (Layer::Dense(d), LayerCache::Dense { input }) => d.backward(&input, grad_out),
            (Layer::Conv2d(c), LayerCache::Conv(cache)) => c.backward(&cache, grad_out),
            (Layer::Separable(s), LayerCache::Separable(cache)) => s.backward(&cache, grad_out),
            (Layer::Activation(a), LayerCache::Activation { input, output }) => {
                Ok((a.backward(&input, &output, grad_out)?, Vec::new()))
            }
            (Layer::Softmax(s), LayerCache::Softmax { output }) => {
                Ok((s.backward(&output, grad_out)?, Vec::new()))
            }
            (Layer::Pool(p), LayerCache::Pool(cache)) => {
                Ok((p.backward(&cache, grad_out)?, Vec::new()))
            }
            (Layer::Dropout(d), LayerCache::Dropout(cache)) => {
                Ok((d.backward(&cache, grad_out)?, Vec::new()))
            }
            (Layer::Upsample(u), LayerCache::Upsample { input_shape }) => {
                Ok((u.backward(&input_shape, grad_out)?, Vec::new()))
            }
            (Layer::Flatten(f), LayerCache::Flatten { input_shape }) => {
                Ok((f.backward(&input_shape, grad_out)?, Vec::new()))
            }
            (Layer::Reshape(_), LayerCache::Reshape { input_shape }) => {
                Ok((grad_out.reshape(input_shape)?, Vec::new()))
            }
            (layer, cache) => Err(Error::state(format!(
                "{} layer received a cache from a different layer kind ({:?})",
                layer.name(),
                std::mem::discriminant(&cache)
            ))),
        }
    }

    pub(crate) fn is_step(&self) -> bool {
        matches!(self, Layer::Activation(a) if matches!(a.kind, ActivationKind::Step { .. }))
    }
}

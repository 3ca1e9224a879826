use super::conv::chw;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Nearest-neighbour upsampling: every value becomes a `factor × factor` block.
#[derive(Debug, Clone, PartialEq)]
pub struct Upsample {
    pub factor: usize,
}

impl Upsample {
    pub fn new(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::config("upsample factor must be positive"));
        }
        Ok(Upsample { factor })
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [c, h, w] = *input else {
            return Err(Error::dim(format!(
                "upsample expects [C,H,W], got {input:?}"
            )));
        };
        Ok(vec![c, h * self.factor, w * self.factor])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        upsample_nearest(x, self.factor)
    }

    pub fn backward(&self, input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
        let expected = self.output_shape(input_shape)?;
        if grad_out.shape() != expected.as_slice() {
            return Err(Error::dim(format!(
                "upsample backward: grad shape {:?}, expected {expected:?}",
                grad_out.shape()
            )));
        }
        let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
        let f = self.factor;
        let ow = w * f;
        let g = grad_out.data();
        let mut dx = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..h * f {
                for x in 0..ow {
                    dx[(ch * h + y / f) * w + x / f] += g[(ch * h * f + y) * ow + x];
                }
            }
        }
        Tensor::new(input_shape.to_vec(), dx)
    }
}

pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = chw(x, "upsample")?;
    if factor == 0 {
        return Err(Error::config("upsample factor must be positive"));
    }
    let (oh, ow) = (h * factor, w * factor);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            let src = &xd[(ch * h + y / factor) * w..(ch * h + y / factor + 1) * w];
            for xx in 0..ow {
                out.push(src[xx / factor]);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Collapses any input into a rank-1 vector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Flatten;

impl Flatten {
    pub fn backward(&self, input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
        grad_out.reshape(input_shape.to_vec())
    }
}

/// Fixed-target reshape; row-major order is untouched.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Reshape {
    pub shape: Vec<usize>,
}

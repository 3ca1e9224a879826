use serde::{Deserialize, Serialize};

use super::conv::{chw, conv_output_extent};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Average,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pool2d {
    pub kind: PoolKind,
    pub size: usize,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    pub(crate) input_shape: [usize; 3],
    /// Flat input index of each output's maximum (max pooling only).
    pub(crate) argmax: Vec<usize>,
}

impl Pool2d {
    pub fn new(kind: PoolKind, size: usize, stride: usize) -> Result<Self> {
        if size == 0 || stride == 0 {
            return Err(Error::config("pool size and stride must be positive"));
        }
        Ok(Pool2d { kind, size, stride })
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [c, h, w] = *input else {
            return Err(Error::dim(format!("pool expects [C,H,W], got {input:?}")));
        };
        Ok(vec![
            c,
            conv_output_extent(h, self.size, self.stride, 0)?,
            conv_output_extent(w, self.size, self.stride, 0)?,
        ])
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, PoolCache)> {
        let out_shape = self.output_shape(x.shape())?;
        let (c, h, w) = chw(x, "pool")?;
        let (oh, ow) = (out_shape[1], out_shape[2]);
        let (k, s) = (self.size, self.stride);
        let xd = x.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::new();
        let area = (k * k) as f64;
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    match self.kind {
                        PoolKind::Max => {
                            let mut best = (ch * h + i * s) * w + j * s;
                            for u in 0..k {
                                for v in 0..k {
                                    let idx = (ch * h + i * s + u) * w + j * s + v;
                                    // Strict comparison keeps the first maximum on ties.
                                    if xd[idx] > xd[best] {
                                        best = idx;
                                    }
                                }
                            }
                            out.push(xd[best]);
                            argmax.push(best);
                        }
                        PoolKind::Average => {
                            let mut acc = 0.0;
                            for u in 0..k {
                                let row = (ch * h + i * s + u) * w + j * s;
                                acc += xd[row..row + k].iter().sum::<f64>();
                            }
                            out.push(acc / area);
                        }
                    }
                }
            }
        }
        Ok((
            Tensor::new(out_shape, out)?,
            PoolCache {
                input_shape: [c, h, w],
                argmax,
            },
        ))
    }

    pub fn backward(&self, cache: &PoolCache, grad_out: &Tensor) -> Result<Tensor> {
        let [c, h, w] = cache.input_shape;
        let out_shape = self.output_shape(&cache.input_shape)?;
        if grad_out.shape() != out_shape.as_slice() {
            return Err(Error::dim(format!(
                "pool backward: grad shape {:?}, expected {out_shape:?}",
                grad_out.shape()
            )));
        }
        let mut dx = vec![0.0; c * h * w];
        let g = grad_out.data();
        match self.kind {
            PoolKind::Max => {
                for (&idx, &gv) in cache.argmax.iter().zip(g) {
                    dx[idx] += gv;
                }
            }
            PoolKind::Average => {
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let (k, s) = (self.size, self.stride);
                let area = (k * k) as f64;
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let gv = g[(ch * oh + i) * ow + j] / area;
                            for u in 0..k {
                                let row = (ch * h + i * s + u) * w + j * s;
                                for d in &mut dx[row..row + k] {
                                    *d += gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![c, h, w], dx)
    }
}

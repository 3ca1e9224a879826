use rand::Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Inverted dropout: survivors are scaled by `1/(1−rate)` during training so
/// that inference is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

#[derive(Debug, Clone)]
pub struct DropoutCache {
    /// `None` when the forward pass was an identity.
    pub(crate) mask: Option<Tensor>,
    pub(crate) shape: Vec<usize>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate })
    }

    fn scale(&self) -> f64 {
        1.0 / (1.0 - self.rate)
    }

    pub fn forward(
        &self,
        x: &Tensor,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Tensor, DropoutCache)> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::config(format!(
                "dropout rate {} outside [0, 1)",
                self.rate
            )));
        }
        if mode == Mode::Inference || self.rate == 0.0 {
            return Ok((
                x.clone(),
                DropoutCache {
                    mask: None,
                    shape: x.shape().to_vec(),
                },
            ));
        }
        let mut mask = Tensor::zeros_like(x);
        for m in mask.data_mut() {
            *m = if rng.random::<f64>() < self.rate {
                0.0
            } else {
                1.0
            };
        }
        let scale = self.scale();
        let out = x.mul(&mask)?.scale(scale);
        Ok((
            out,
            DropoutCache {
                mask: Some(mask),
                shape: x.shape().to_vec(),
            },
        ))
    }

    pub fn backward(&self, cache: &DropoutCache, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.shape() != cache.shape.as_slice() {
            return Err(Error::dim(format!(
                "dropout backward: grad shape {:?}, expected {:?}",
                grad_out.shape(),
                cache.shape
            )));
        }
        match &cache.mask {
            None => Ok(grad_out.clone()),
            Some(mask) => Ok(grad_out.mul(mask)?.scale(self.scale())),
        }
    }
}

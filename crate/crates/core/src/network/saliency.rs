use super::Network;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

/// `|∂ output[index] / ∂x|`, shaped like `x`. The output is indexed in
/// flattened row-major order.
pub fn saliency(net: &Network, x: &Tensor, index: usize) -> Result<Tensor> {
    if net.has_step() {
        return Err(Error::Unsupported(
            "saliency needs a differentiable network; step activations have no useful gradient"
                .into(),
        ));
    }
    let (y, caches) = net.forward(x, Mode::Inference, &mut rng_from_seed(0))?;
    if index >= y.len() {
        return Err(Error::config(format!(
            "output index {index} out of range for {} outputs",
            y.len()
        )));
    }
    let mut onehot = Tensor::zeros_like(&y);
    onehot.data_mut()[index] = 1.0;
    Ok(net.backward(caches, &onehot)?.input.map(f64::abs))
}

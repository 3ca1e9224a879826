use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Predictions are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before any log.
pub const PROB_CLAMP: f64 = 1e-12;

/// Task loss.
///
/// "Mean average error" is read as the mean *absolute* error; the mean
/// squared error is available separately and is what the autoencoders use
/// for reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MeanAbsoluteError,
    MeanSquaredError,
    BinaryCrossEntropy,
    /// `−Σ t·ln p`, averaged over distributions: a rank-1 prediction is one
    /// distribution, a `[C,H,W]` prediction is `H·W` per-pixel distributions.
    CategoricalCrossEntropy,
}

impl LossKind {
    pub(crate) fn has_kink(&self) -> bool {
        matches!(self, LossKind::MeanAbsoluteError)
    }
}

fn clamp_prob(p: f64) -> (f64, bool) {
    if p < PROB_CLAMP {
        (PROB_CLAMP, true)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, true)
    } else {
        (p, false)
    }
}

/// Returns `(value, ∂value/∂prediction)`.
pub fn loss(kind: LossKind, prediction: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if prediction.shape() != target.shape() {
        return Err(Error::dim(format!(
            "loss: prediction {:?} and target {:?} differ",
            prediction.shape(),
            target.shape()
        )));
    }
    let n = prediction.len() as f64;
    let pairs = prediction.data().iter().zip(target.data());
    let (value, grad): (f64, Vec<f64>) = match kind {
        LossKind::MeanAbsoluteError => {
            let mut total = 0.0;
            let g = pairs
                .map(|(&p, &t)| {
                    total += (p - t).abs();
                    if p > t {
                        1.0 / n
                    } else if p < t {
                        -1.0 / n
                    } else {
                        0.0
                    }
                })
                .collect();
            (total / n, g)
        }
        LossKind::MeanSquaredError => {
            let mut total = 0.0;
            let g = pairs
                .map(|(&p, &t)| {
                    let d = p - t;
                    total += d * d;
                    2.0 * d / n
                })
                .collect();
            (total / n, g)
        }
        LossKind::BinaryCrossEntropy => {
            let mut total = 0.0;
            let g = pairs
                .map(|(&p, &t)| {
                    let (pc, clamped) = clamp_prob(p);
                    total -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
                    if clamped {
                        0.0
                    } else {
                        (-t / pc + (1.0 - t) / (1.0 - pc)) / n
                    }
                })
                .collect();
            (total / n, g)
        }
        LossKind::CategoricalCrossEntropy => {
            let groups = match prediction.shape() {
                [_] => 1.0,
                [_, h, w] => (h * w) as f64,
                other => {
                    return Err(Error::dim(format!(
                        "categorical cross-entropy expects rank-1 or [C,H,W], got {other:?}"
                    )))
                }
            };
            let mut total = 0.0;
            let g = pairs
                .map(|(&p, &t)| {
                    let (pc, clamped) = clamp_prob(p);
                    total -= t * pc.ln();
                    if clamped {
                        0.0
                    } else {
                        -t / pc / groups
                    }
                })
                .collect();
            (total / groups, g)
        }
    };
    Ok((value, Tensor::new(prediction.shape().to_vec(), grad)?))
}

/// `λ_r · Σ w²` over the given weight tensors, with gradients `2·λ_r·w`.
/// Callers pass weights only; biases are never penalized.
pub fn l2_penalty(weights: &[&Tensor], reg_strength: f64) -> Result<(f64, Vec<Tensor>)> {
    if !(reg_strength >= 0.0 && reg_strength.is_finite()) {
        return Err(Error::config(format!(
            "regularization strength {reg_strength} must be finite and non-negative"
        )));
    }
    let value = reg_strength * weights.iter().map(|w| w.sum_squares()).sum::<f64>();
    let grads = weights
        .iter()
        .map(|w| w.scale(2.0 * reg_strength))
        .collect();
    Ok((value, grads))
}

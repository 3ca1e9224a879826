//! Losses, the L2 penalty, parameter-update rules and mini-batching.

mod loss;

pub use loss::{l2_penalty, loss, LossKind, PROB_CLAMP};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_indexed, rng_from_seed};
use crate::tensor::Tensor;

/// Added under the square root of the adaptive rule.
pub const ADAPTIVE_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `w ← w − λ·g`
    GradientDescent,
    /// Accumulated squared gradients: `a ← a + g²; w ← w − λ·g/√(a + ε)`.
    Adaptive,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Optimization steps taken so far (one per batch, not per parameter).
    pub iteration: u64,
    pub reg_strength: f64,
    accumulators: Vec<Tensor>,
}

impl OptimizerState {
    /// A zero learning rate is accepted and yields a null update.
    pub fn new(kind: OptimizerKind, learning_rate: f64, reg_strength: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {learning_rate} must be finite and non-negative"
            )));
        }
        if !(reg_strength >= 0.0 && reg_strength.is_finite()) {
            return Err(Error::config(format!(
                "regularization strength {reg_strength} must be finite and non-negative"
            )));
        }
        Ok(OptimizerState {
            kind,
            learning_rate,
            iteration: 0,
            reg_strength,
            accumulators: Vec::new(),
        })
    }

    pub fn accumulators(&self) -> &[Tensor] {
        &self.accumulators
    }

    /// One plain gradient-descent update, in place.
    pub fn gd_step(&self, w: &mut Tensor, grad: &Tensor) -> Result<()> {
        w.axpy(-self.learning_rate, grad)
    }

    /// One adaptive update of the parameter in accumulator slot `slot`.
    pub fn adaptive_step(&mut self, slot: usize, w: &mut Tensor, grad: &Tensor) -> Result<()> {
        if w.shape() != grad.shape() {
            return Err(Error::dim(format!(
                "adaptive step: parameter {:?} vs gradient {:?}",
                w.shape(),
                grad.shape()
            )));
        }
        while self.accumulators.len() <= slot {
            self.accumulators.push(Tensor::zeros_like(w));
        }
        let acc = &mut self.accumulators[slot];
        if acc.shape() != w.shape() {
            return Err(Error::dim(format!(
                "accumulator slot {slot} has shape {:?}, parameter has {:?}",
                acc.shape(),
                w.shape()
            )));
        }
        let lr = self.learning_rate;
        for ((wv, &g), a) in w.data_mut().iter_mut().zip(grad.data()).zip(acc.data_mut()) {
            *a += g * g;
            *wv -= lr * g / (*a + ADAPTIVE_EPSILON).sqrt();
        }
        Ok(())
    }

    /// One optimization step over an ordered parameter list. The list order
    /// must be the same at every step; it indexes the accumulators.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (slot, (w, g)) in params.into_iter().zip(grads).enumerate() {
            match self.kind {
                OptimizerKind::GradientDescent => self.gd_step(w, g)?,
                OptimizerKind::Adaptive => self.adaptive_step(slot, w, g)?,
            }
        }
        self.iteration += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    #[serde(default = "default_shuffle")]
    pub shuffle: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_shuffle() -> bool {
    true
}

/// Partitions `0..n_examples` into batches for the given epoch. With
/// shuffling on, the order is a deterministic function of `(seed, epoch)`.
/// The final batch may be short.
pub fn make_batches(n_examples: usize, plan: &BatchPlan, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if n_examples == 0 {
        return Err(Error::config("cannot batch an empty dataset"));
    }
    if plan.batch_size == 0 || plan.batch_size > n_examples {
        return Err(Error::config(format!(
            "batch size {} outside [1, {n_examples}]",
            plan.batch_size
        )));
    }
    let mut order: Vec<usize> = (0..n_examples).collect();
    if plan.shuffle {
        let mut rng = rng_from_seed(derive_indexed(plan.seed, &[epoch as u64]));
        order.shuffle(&mut rng);
    }
    Ok(order
        .chunks(plan.batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

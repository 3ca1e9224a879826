//! Recurrent cells, unrolling, backpropagation through time and the
//! features-into-recurrence composition.
//!
//! The initial hidden state (and memory, for the gated cell) is the zero
//! vector unless given explicitly. BPTT is never truncated.

mod cell;
mod train;

pub use cell::{GatedCell, GatedStepCache, HiddenActivation, RnnCell, RnnStepCache};
pub use train::{
    cnn_then_rnn, sequence_accuracy, sequence_example_gradients, train_sequence, OutputHead,
    RnnHistory, RnnRecord, RnnTrainConfig, SequenceModel, Supervision,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{max_relative_error, numeric_gradient};
use crate::rng::{rng_from_seed, SeededRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Rnn,
    Gated,
}

fn default_activation() -> HiddenActivation {
    HiddenActivation::Tanh
}

/// Architecture of a recurrent cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub kind: CellKind,
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    /// Hidden activation of the simple cell; the gated cell is always tanh.
    #[serde(default = "default_activation")]
    pub activation: HiddenActivation,
}

impl CellSpec {
    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.hidden == 0 || self.outputs == 0 {
            return Err(Error::config(format!(
                "cell extents must be positive, got inputs {} hidden {} outputs {}",
                self.inputs, self.hidden, self.outputs
            )));
        }
        if self.kind == CellKind::Gated && self.activation != HiddenActivation::Tanh {
            return Err(Error::config(
                "the gated cell only supports the tanh activation",
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (n, h, o) = (self.inputs, self.hidden, self.outputs);
        match self.kind {
            CellKind::Rnn => h * n + h * h + h + o * h + o,
            CellKind::Gated => 4 * (h * (n + h) + h) + o * h + o,
        }
    }

    pub fn build(&self, rng: &mut SeededRng) -> Result<Cell> {
        self.validate()?;
        Ok(match self.kind {
            CellKind::Rnn => Cell::Rnn(RnnCell::init(
                self.inputs,
                self.hidden,
                self.outputs,
                self.activation,
                rng,
            )),
            CellKind::Gated => {
                Cell::Gated(GatedCell::init(self.inputs, self.hidden, self.outputs, rng))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Cell {
    Rnn(RnnCell),
    Gated(GatedCell),
}

#[derive(Debug, Clone)]
enum StepCache {
    Rnn(RnnStepCache),
    Gated(GatedStepCache),
}

/// Per-step caches of one unroll. Consumed by [`bptt`]; rejected if the
/// cell's parameters changed in between.
#[derive(Debug, Clone)]
pub struct SequenceCache {
    fingerprint: u64,
    steps: Vec<StepCache>,
}

impl SequenceCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Unrolled {
    /// `y_1 … y_T`.
    pub outputs: Vec<Tensor>,
    /// `h_1 … h_T`.
    pub states: Vec<Tensor>,
    /// `c_1 … c_T` for the gated cell, empty for the simple cell.
    pub memories: Vec<Tensor>,
    pub cache: SequenceCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpttGrads {
    /// Aligned with [`Cell::params`], summed over steps.
    pub params: Vec<Tensor>,
    pub h0: Tensor,
    /// `∂L/∂x_τ` per step.
    pub inputs: Vec<Tensor>,
}

impl Cell {
    pub fn spec(&self) -> CellSpec {
        match self {
            Cell::Rnn(c) => CellSpec {
                kind: CellKind::Rnn,
                inputs: c.inputs(),
                hidden: c.hidden(),
                outputs: c.outputs(),
                activation: c.activation,
            },
            Cell::Gated(c) => CellSpec {
                kind: CellKind::Gated,
                inputs: c.inputs(),
                hidden: c.hidden(),
                outputs: c.outputs(),
                activation: HiddenActivation::Tanh,
            },
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            Cell::Rnn(c) => c.inputs(),
            Cell::Gated(c) => c.inputs(),
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            Cell::Rnn(c) => c.hidden(),
            Cell::Gated(c) => c.hidden(),
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            Cell::Rnn(c) => c.outputs(),
            Cell::Gated(c) => c.outputs(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Cell::Rnn(c) => c.params(),
            Cell::Gated(c) => c.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Cell::Rnn(c) => c.params_mut(),
            Cell::Gated(c) => c.params_mut(),
        }
    }

    /// Which entries of [`Cell::params`] are weights (as opposed to biases).
    pub fn weight_flags(&self) -> Vec<bool> {
        match self {
            Cell::Rnn(_) => RnnCell::weight_flags(),
            Cell::Gated(_) => GatedCell::weight_flags(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().into_iter().map(Tensor::zeros_like).collect()
    }

    /// FNV-1a over every parameter bit pattern.
    fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params() {
            for &e in p.shape() {
                h = (h ^ e as u64).wrapping_mul(0x0000_0100_0000_01B3);
            }
            for v in p.data() {
                h = (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
        h
    }
}

/// Splits a `[T, n]` sequence tensor into its steps.
pub fn sequence_steps(seq: &Tensor) -> Result<Vec<Tensor>> {
    if seq.rank() < 2 {
        return Err(Error::dim(format!(
            "a sequence needs rank ≥ 2, got {:?}",
            seq.shape()
        )));
    }
    Ok(seq.unstack())
}

/// Runs the cell over `inputs` from `h0` (memory starts at zero).
pub fn unroll(cell: &Cell, inputs: &[Tensor], h0: &Tensor) -> Result<Unrolled> {
    if inputs.is_empty() {
        return Err(Error::dim("cannot unroll an empty sequence"));
    }
    if h0.shape() != [cell.hidden()] {
        return Err(Error::dim(format!(
            "initial state must have extent {}, got {:?}",
            cell.hidden(),
            h0.shape()
        )));
    }
    let t = inputs.len();
    let mut out = Unrolled {
        outputs: Vec::with_capacity(t),
        states: Vec::with_capacity(t),
        memories: Vec::new(),
        cache: SequenceCache {
            fingerprint: cell.fingerprint(),
            steps: Vec::with_capacity(t),
        },
    };
    let mut h = h0.clone();
    let mut c = Tensor::zeros([cell.hidden()]);
    for (tau, x) in inputs.iter().enumerate() {
        let step = match cell {
            Cell::Rnn(r) => r
                .step(x, &h)
                .map(|(y, h_new, k)| (y, h_new, None, StepCache::Rnn(k))),
            Cell::Gated(g) => g
                .step(x, &h, &c)
                .map(|(y, h_new, c_new, k)| (y, h_new, Some(c_new), StepCache::Gated(k))),
        };
        let (y, h_new, c_new, cache) = step.map_err(|e| match e {
            Error::Dimension(m) => Error::Dimension(format!("step {}: {m}", tau + 1)),
            other => other,
        })?;
        out.outputs.push(y);
        out.states.push(h_new.clone());
        if let Some(c_new) = c_new {
            out.memories.push(c_new.clone());
            c = c_new;
        }
        out.cache.steps.push(cache);
        h = h_new;
    }
    Ok(out)
}

/// Backpropagation through time: reverse-order chain rule over the
/// unrolled steps. `output_grads[τ]` is `∂L/∂y_τ`; pass zeros for unsupervised
/// steps.
pub fn bptt(cell: &Cell, cache: SequenceCache, output_grads: &[Tensor]) -> Result<BpttGrads> {
    if cache.fingerprint != cell.fingerprint() {
        return Err(Error::state(
            "sequence cache was produced by different cell parameters (stale or foreign cache)",
        ));
    }
    let t = cache.steps.len();
    if output_grads.len() != t {
        return Err(Error::dim(format!(
            "{t} unrolled steps but {} output gradients",
            output_grads.len()
        )));
    }
    let h = cell.hidden();
    let mut grads = cell.zero_grads();
    let mut dh = vec![0.0; h];
    let mut dc = vec![0.0; h];
    let mut dxs = vec![Vec::new(); t];
    for (tau, step) in cache.steps.iter().enumerate().rev() {
        let dy = &output_grads[tau];
        match (cell, step) {
            (Cell::Rnn(r), StepCache::Rnn(k)) => {
                let (dx, dh_prev) = r.step_backward(k, dy, &dh, &mut grads)?;
                dxs[tau] = dx;
                dh = dh_prev;
            }
            (Cell::Gated(g), StepCache::Gated(k)) => {
                let (dx, dh_prev, dc_prev) = g.step_backward(k, dy, &dh, &dc, &mut grads)?;
                dxs[tau] = dx;
                dh = dh_prev;
                dc = dc_prev;
            }
            _ => {
                return Err(Error::state(
                    "sequence cache belongs to a different cell kind",
                ))
            }
        }
    }
    let n = cell.inputs();
    Ok(BpttGrads {
        params: grads,
        h0: Tensor::new([h], dh)?,
        inputs: dxs
            .into_iter()
            .map(|d| Tensor::new([n], d))
            .collect::<Result<_>>()?,
    })
}

/// `‖∂L_T/∂x_τ‖` for `τ = 1…T`, where `L_T = Σ y_T` and the inputs are
/// standard-normal draws from `probe_seed`. Shows how strongly the final
/// output still depends on each earlier input.
pub fn gradient_flow_profile(cell: &Cell, length: usize, probe_seed: u64) -> Result<Vec<f64>> {
    if length < 2 {
        return Err(Error::config(format!(
            "profile length must be at least 2, got {length}"
        )));
    }
    let mut rng = rng_from_seed(probe_seed);
    let inputs: Vec<Tensor> = (0..length)
        .map(|_| Tensor::standard_normal([cell.inputs()], &mut rng))
        .collect();
    let run = unroll(cell, &inputs, &Tensor::zeros([cell.hidden()]))?;
    let mut grads = vec![Tensor::zeros([cell.outputs()]); length];
    grads[length - 1] = Tensor::full([cell.outputs()], 1.0);
    let g = bptt(cell, run.cache, &grads)?;
    Ok(g.inputs.iter().map(|d| d.sum_squares().sqrt()).collect())
}

/// Checks [`bptt`] against central finite differences of the probe loss
/// `Σ_τ r_τ ⊙ (y_τ − y_τ⁰)` with random `r_τ`, over every parameter, every
/// input step and `h0`. Returns the largest relative error.
pub fn bptt_gradient_error(
    cell: &Cell,
    inputs: &[Tensor],
    h0: &Tensor,
    probe_seed: u64,
    eps: f64,
) -> Result<f64> {
    let base = unroll(cell, inputs, h0)?;
    let mut rng = rng_from_seed(probe_seed);
    let probes: Vec<Tensor> = base
        .outputs
        .iter()
        .map(|y| Tensor::standard_normal(y.shape().to_vec(), &mut rng))
        .collect();
    let probe = |c: &Cell, xs: &[Tensor], h: &Tensor| -> Result<(f64, Vec<u64>)> {
        let run = unroll(c, xs, h)?;
        let mut v = 0.0;
        for ((y, y0), r) in run.outputs.iter().zip(&base.outputs).zip(&probes) {
            for ((a, b), w) in y.data().iter().zip(y0.data()).zip(r.data()) {
                v += (a - b) * w;
            }
        }
        Ok((v, Vec::new()))
    };
    let g = bptt(cell, base.cache, &probes)?;

    let mut worst = max_relative_error(
        &g.h0,
        &numeric_gradient(h0, eps, |h| probe(cell, inputs, h))?,
    );
    for (tau, dx) in g.inputs.iter().enumerate() {
        let numeric = numeric_gradient(&inputs[tau], eps, |x| {
            let mut xs = inputs.to_vec();
            xs[tau] = x.clone();
            probe(cell, &xs, h0)
        })?;
        worst = worst.max(max_relative_error(dx, &numeric));
    }
    for (pi, grad) in g.params.iter().enumerate() {
        let numeric = numeric_gradient(cell.params()[pi], eps, |p| {
            let mut c = cell.clone();
            *c.params_mut()[pi] = p.clone();
            probe(&c, inputs, h0)
        })?;
        worst = worst.max(max_relative_error(grad, &numeric));
    }
    Ok(worst)
}

use serde::{Deserialize, Serialize};

use super::{bptt, sequence_steps, unroll, Cell};
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::layers::{sigmoid, LayerCache, Mode, Softmax};
use crate::network::{accumulate, scale_grads, Network, ParamGrads};
use crate::optim::{loss, make_batches, BatchPlan, LossKind, OptimizerKind, OptimizerState};
use crate::rng::{derive_indexed, derive_seed, rng_from_seed};
use crate::tensor::Tensor;

/// Squashing applied to each per-step cell output before the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Identity,
    Sigmoid,
    Softmax,
}

impl OutputHead {
    fn apply(self, y: &Tensor) -> Result<Tensor> {
        match self {
            OutputHead::Identity => Ok(y.clone()),
            OutputHead::Sigmoid => Ok(y.map(sigmoid)),
            OutputHead::Softmax => Softmax.forward(y),
        }
    }

    fn backward(self, p: &Tensor, dp: &Tensor) -> Result<Tensor> {
        match self {
            OutputHead::Identity => Ok(dp.clone()),
            OutputHead::Sigmoid => p.mul(dp)?.mul(&p.map(|v| 1.0 - v)),
            OutputHead::Softmax => Softmax.backward(p, dp),
        }
    }

    /// Whether a prediction counts as matching its target.
    fn correct(self, p: &Tensor, t: &Tensor) -> bool {
        match self {
            OutputHead::Softmax => p.argmax() == t.argmax(),
            _ => p
                .data()
                .iter()
                .zip(t.data())
                .all(|(&a, &b)| (a >= 0.5) == (b >= 0.5)),
        }
    }
}

/// Whether every step carries a target (`[T, o]`) or only the last (`[o]`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    PerStep,
    Final,
}

/// An optional per-frame feature network feeding a recurrent cell, followed
/// by an output head.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    pub features: Option<Network>,
    pub cell: Cell,
    pub head: OutputHead,
}

fn check_features(features: &Network, cell: &Cell) -> Result<()> {
    let out = features.output_shape();
    if out != [cell.inputs()] {
        return Err(Error::config(format!(
            "feature network produces {out:?} but the cell expects inputs of extent {}",
            cell.inputs()
        )));
    }
    Ok(())
}

impl SequenceModel {
    pub fn new(features: Option<Network>, cell: Cell, head: OutputHead) -> Result<Self> {
        if let Some(f) = &features {
            check_features(f, &cell)?;
        }
        Ok(SequenceModel {
            features,
            cell,
            head,
        })
    }

    /// Expected shape of one frame.
    pub fn frame_shape(&self) -> Vec<usize> {
        match &self.features {
            Some(f) => f.input_shape().to_vec(),
            None => vec![self.cell.inputs()],
        }
    }

    pub fn param_count(&self) -> usize {
        self.cell.param_count() + self.features.as_ref().map_or(0, Network::param_count)
    }

    /// Checks that a sequence dataset fits the model under `supervision`.
    pub fn check_dataset(&self, ds: &Dataset, supervision: Supervision) -> Result<()> {
        if ds.task != Task::Sequence {
            return Err(Error::config(format!(
                "expected a sequence dataset, got {}",
                ds.task.name()
            )));
        }
        let (Some(input), Some(target)) = (ds.input_shape(), ds.target_shape()) else {
            return Err(Error::config("sequence dataset is empty"));
        };
        if input.len() < 2 || input[1..] != self.frame_shape()[..] {
            return Err(Error::config(format!(
                "sequence inputs {input:?} do not match frames of shape {:?}",
                self.frame_shape()
            )));
        }
        let o = self.cell.outputs();
        let ok = match supervision {
            Supervision::PerStep => target == [input[0], o],
            Supervision::Final => target == [o],
        };
        if !ok {
            return Err(Error::config(format!(
                "{supervision:?} supervision needs targets of shape {:?}, got {target:?}",
                match supervision {
                    Supervision::PerStep => vec![input[0], o],
                    Supervision::Final => vec![o],
                }
            )));
        }
        Ok(())
    }

    fn features_forward(
        &self,
        frames: &[Tensor],
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<(Vec<Tensor>, Vec<Vec<LayerCache>>)> {
        match &self.features {
            None => Ok((frames.to_vec(), Vec::new())),
            Some(net) => {
                let mut rng = rng_from_seed(dropout_seed);
                let mut feats = Vec::with_capacity(frames.len());
                let mut caches = Vec::with_capacity(frames.len());
                for f in frames {
                    let (y, c) = net.forward(f, mode, &mut rng)?;
                    feats.push(y);
                    caches.push(c);
                }
                Ok((feats, caches))
            }
        }
    }

    /// Per-step head outputs for one `[T, …]` sequence, in inference mode.
    pub fn predict(&self, sequence: &Tensor) -> Result<Vec<Tensor>> {
        let frames = sequence_steps(sequence)?;
        let (feats, _) = self.features_forward(&frames, Mode::Inference, 0)?;
        let run = unroll(&self.cell, &feats, &Tensor::zeros([self.cell.hidden()]))?;
        run.outputs.iter().map(|y| self.head.apply(y)).collect()
    }
}

/// Per-frame feature extraction followed by an unroll from the zero state.
/// Returns the raw per-step cell outputs.
pub fn cnn_then_rnn(features: &Network, cell: &Cell, frames: &[Tensor]) -> Result<Vec<Tensor>> {
    check_features(features, cell)?;
    let feats = frames
        .iter()
        .map(|f| features.predict(f))
        .collect::<Result<Vec<_>>>()?;
    Ok(unroll(cell, &feats, &Tensor::zeros([cell.hidden()]))?.outputs)
}

/// Loss, cell gradients and (if present) feature-network gradients for one
/// sequence. Per-step losses are averaged over steps.
pub fn sequence_example_gradients(
    model: &SequenceModel,
    sequence: &Tensor,
    target: &Tensor,
    supervision: Supervision,
    kind: LossKind,
    mode: Mode,
    dropout_seed: u64,
) -> Result<(f64, Vec<Tensor>, Option<ParamGrads>)> {
    let frames = sequence_steps(sequence)?;
    let t = frames.len();
    let (feats, feat_caches) = model.features_forward(&frames, mode, dropout_seed)?;
    let run = unroll(&model.cell, &feats, &Tensor::zeros([model.cell.hidden()]))?;
    let targets = match supervision {
        Supervision::PerStep => target.unstack(),
        Supervision::Final => vec![target.clone()],
    };
    if targets.len() > t {
        return Err(Error::dim(format!(
            "{} step targets for a sequence of length {t}",
            targets.len()
        )));
    }
    let first_supervised = t - targets.len();
    let mut value = 0.0;
    let mut grads = vec![Tensor::zeros([model.cell.outputs()]); t];
    for (k, tgt) in targets.iter().enumerate() {
        let tau = first_supervised + k;
        let p = model.head.apply(&run.outputs[tau])?;
        let (l, dp) = loss(kind, &p, tgt)?;
        value += l;
        grads[tau] = model.head.backward(&p, &dp)?;
    }
    let scale = 1.0 / targets.len() as f64;
    for g in &mut grads {
        *g = g.scale(scale);
    }
    let g = bptt(&model.cell, run.cache, &grads)?;
    let feature_grads = match &model.features {
        None => None,
        Some(net) => {
            let mut acc = net.zero_grads();
            for (cache, dx) in feat_caches.into_iter().zip(&g.inputs) {
                accumulate(&mut acc, &net.backward(cache, dx)?.params)?;
            }
            Some(acc)
        }
    };
    Ok((value * scale, g.params, feature_grads))
}

fn default_batch_size() -> usize {
    16
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adaptive
}

fn default_learning_rate() -> f64 {
    0.1
}

fn default_supervision() -> Supervision {
    Supervision::PerStep
}

fn default_log_every() -> usize {
    100
}

/// Hyperparameters of sequence training. One step is one optimizer update
/// on one mini-batch of sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RnnTrainConfig {
    pub steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    pub loss: LossKind,
    #[serde(default = "default_supervision")]
    pub supervision: Supervision,
    /// Rescales the batch gradient to this global norm when exceeded.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

impl RnnTrainConfig {
    pub fn new(steps: usize, loss: LossKind) -> Self {
        RnnTrainConfig {
            steps,
            batch_size: default_batch_size(),
            optimizer: default_optimizer(),
            learning_rate: default_learning_rate(),
            loss,
            supervision: default_supervision(),
            clip_norm: None,
            seed: 0,
            log_every: default_log_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be at least 1"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config(format!(
                    "clip norm {c} must be positive and finite"
                )));
            }
        }
        OptimizerState::new(self.optimizer, self.learning_rate, 0.0).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnRecord {
    pub step: usize,
    /// Mean batch loss since the previous record.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Fraction of supervised steps predicted correctly.
    pub val_step_accuracy: f64,
    /// Fraction of sequences whose last step is predicted correctly.
    pub val_final_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnHistory {
    pub records: Vec<RnnRecord>,
}

impl RnnHistory {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("step,train_loss,val_loss,val_step_accuracy,val_final_accuracy\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.train_loss, r.val_loss, r.val_step_accuracy, r.val_final_accuracy
            ));
        }
        out
    }
}

/// `(loss, step accuracy, final-step accuracy)` over a sequence dataset in
/// inference mode.
pub fn sequence_accuracy(
    model: &SequenceModel,
    ds: &Dataset,
    supervision: Supervision,
    kind: LossKind,
) -> Result<(f64, f64, f64)> {
    model.check_dataset(ds, supervision)?;
    let (mut total_loss, mut steps_ok, mut steps, mut finals_ok) = (0.0, 0usize, 0usize, 0usize);
    for e in &ds.examples {
        let preds = model.predict(&e.input)?;
        let targets = match supervision {
            Supervision::PerStep => e.target.unstack(),
            Supervision::Final => vec![e.target.clone()],
        };
        let offset = preds.len() - targets.len();
        let mut seq_loss = 0.0;
        for (k, t) in targets.iter().enumerate() {
            let p = &preds[offset + k];
            seq_loss += loss(kind, p, t)?.0;
            if model.head.correct(p, t) {
                steps_ok += 1;
            }
            steps += 1;
        }
        total_loss += seq_loss / targets.len() as f64;
        if model
            .head
            .correct(&preds[preds.len() - 1], &targets[targets.len() - 1])
        {
            finals_ok += 1;
        }
    }
    let n = ds.len() as f64;
    Ok((
        total_loss / n,
        steps_ok as f64 / steps as f64,
        finals_ok as f64 / n,
    ))
}

fn clip(cell_grads: &mut [Tensor], feature_grads: Option<&mut ParamGrads>, max_norm: f64) {
    let mut sq: f64 = cell_grads.iter().map(Tensor::sum_squares).sum();
    if let Some(fg) = &feature_grads {
        sq += fg.iter().flatten().map(Tensor::sum_squares).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in cell_grads.iter_mut() {
            *g = g.scale(s);
        }
        if let Some(fg) = feature_grads {
            scale_grads(fg, s);
        }
    }
}

/// Mini-batch sequence training with full BPTT. Batches cycle through
/// shuffled epochs of `train_set` until `config.steps` updates are done.
pub fn train_sequence(
    model: &mut SequenceModel,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &RnnTrainConfig,
) -> Result<RnnHistory> {
    config.validate()?;
    model.check_dataset(train_set, config.supervision)?;
    model.check_dataset(val_set, config.supervision)?;
    if config.batch_size > train_set.len() {
        return Err(Error::config(format!(
            "batch size {} exceeds the {} training sequences",
            config.batch_size,
            train_set.len()
        )));
    }
    let plan = BatchPlan {
        batch_size: config.batch_size,
        shuffle: true,
        seed: derive_seed(config.seed, "batching"),
    };
    let dropout_base = derive_seed(config.seed, "dropout");
    let mut cell_opt = OptimizerState::new(config.optimizer, config.learning_rate, 0.0)?;
    let mut feature_opt = OptimizerState::new(config.optimizer, config.learning_rate, 0.0)?;
    let mut history = RnnHistory {
        records: Vec::new(),
    };
    let (mut since_log, mut loss_since_log) = (0usize, 0.0);
    let mut epoch = 0;
    let mut step = 0;
    while step < config.steps {
        epoch += 1;
        for batch in make_batches(train_set.len(), &plan, epoch)? {
            if step == config.steps {
                break;
            }
            step += 1;
            let mut cell_grads = model.cell.zero_grads();
            let mut feature_grads = model.features.as_ref().map(Network::zero_grads);
            let mut batch_loss = 0.0;
            for &i in &batch {
                let e = &train_set.examples[i];
                let seed = derive_indexed(dropout_base, &[step as u64, i as u64]);
                let (l, cg, fg) = sequence_example_gradients(
                    model,
                    &e.input,
                    &e.target,
                    config.supervision,
                    config.loss,
                    Mode::Training,
                    seed,
                )?;
                batch_loss += l;
                for (a, g) in cell_grads.iter_mut().zip(&cg) {
                    a.add_assign(g)?;
                }
                if let (Some(acc), Some(fg)) = (feature_grads.as_mut(), fg) {
                    accumulate(acc, &fg)?;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            batch_loss *= inv;
            for g in &mut cell_grads {
                *g = g.scale(inv);
            }
            if let Some(fg) = feature_grads.as_mut() {
                scale_grads(fg, inv);
            }
            let finite = cell_grads.iter().all(Tensor::all_finite)
                && feature_grads
                    .iter()
                    .flatten()
                    .flatten()
                    .all(Tensor::all_finite);
            if !batch_loss.is_finite() || !finite {
                return Err(Error::Numeric(format!(
                    "sequence training diverged at step {step}: loss {batch_loss}"
                )));
            }
            if let Some(c) = config.clip_norm {
                clip(&mut cell_grads, feature_grads.as_mut(), c);
            }
            cell_opt.step(model.cell.params_mut(), &cell_grads)?;
            if let (Some(net), Some(fg)) = (model.features.as_mut(), feature_grads.as_ref()) {
                net.apply_update(&mut feature_opt, fg)?;
            }
            since_log += 1;
            loss_since_log += batch_loss;
            if step % config.log_every == 0 || step == config.steps {
                let (val_loss, step_acc, final_acc) =
                    sequence_accuracy(model, val_set, config.supervision, config.loss)?;
                history.records.push(RnnRecord {
                    step,
                    train_loss: loss_since_log / since_log as f64,
                    val_loss,
                    val_step_accuracy: step_acc,
                    val_final_accuracy: final_acc,
                });
                since_log = 0;
                loss_since_log = 0.0;
            }
        }
    }
    Ok(history)
}

use serde::{Deserialize, Serialize};

use super::metrics::accuracy;
use super::{accumulate, scale_grads, Network, ParamGrads};
use crate::data::{AugmentConfig, Dataset, Task};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::optim::{loss, make_batches, BatchPlan, LossKind, OptimizerKind, OptimizerState};
use crate::rng::{derive_indexed, derive_seed, rng_from_seed};
use crate::tensor::Tensor;

fn default_patience() -> usize {
    5
}

fn default_learning_rate() -> f64 {
    0.1
}

fn default_batch_size() -> usize {
    16
}

fn default_true() -> bool {
    true
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::GradientDescent
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables
    /// early stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    pub loss: LossKind,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// λ_r of the L2 penalty on weights.
    #[serde(default)]
    pub reg_strength: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub augment: Option<AugmentConfig>,
}

impl TrainConfig {
    pub fn new(epochs: usize, loss: LossKind) -> Self {
        TrainConfig {
            epochs,
            patience: default_patience(),
            loss,
            optimizer: default_optimizer(),
            learning_rate: default_learning_rate(),
            reg_strength: 0.0,
            batch_size: default_batch_size(),
            shuffle: true,
            seed: 0,
            augment: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        OptimizerState::new(self.optimizer, self.learning_rate, self.reg_strength)?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    /// Optimizer steps taken by the end of this epoch.
    pub iteration: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// Epoch with the lowest validation loss.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_metric\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.val_metric
            ));
        }
        out
    }

    pub fn final_record(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Patience-based stopping on a stream of validation losses.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
    seen: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
            seen: 0,
        }
    }

    /// Records one epoch's validation loss. Returns `true` when training
    /// should stop after this epoch. A loss counts as an improvement only if
    /// strictly below the best so far.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        self.seen += 1;
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = self.seen;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.patience > 0 && self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn improved_last(&self) -> bool {
        self.seen > 0 && self.best_epoch == self.seen
    }
}

/// Loss and parameter gradients for one example.
pub(crate) fn example_gradients(
    net: &Network,
    input: &Tensor,
    target: &Tensor,
    kind: LossKind,
    mode: Mode,
    dropout_seed: u64,
) -> Result<(f64, ParamGrads)> {
    let mut rng = rng_from_seed(dropout_seed);
    let (y, caches) = net.forward(input, mode, &mut rng)?;
    let (value, grad) = loss(kind, &y, target)?;
    Ok((value, net.backward(caches, &grad)?.params))
}

/// Mean task loss over a dataset in inference mode.
pub fn dataset_loss(net: &Network, ds: &Dataset, kind: LossKind) -> Result<f64> {
    let mut total = 0.0;
    for e in &ds.examples {
        total += loss(kind, &net.predict(&e.input)?, &e.target)?.0;
    }
    Ok(total / ds.len() as f64)
}

fn augmented(
    config: &TrainConfig,
    task: Task,
    input: &Tensor,
    target: &Tensor,
    epoch: usize,
    index: usize,
) -> Result<(Tensor, Tensor)> {
    match &config.augment {
        Some(a) if input.rank() == 3 => {
            let seed = derive_indexed(
                derive_seed(config.seed, "augment"),
                &[epoch as u64, index as u64],
            );
            let t = a.sample(&mut rng_from_seed(seed));
            let x = t.apply(input)?;
            let y = if task == Task::PerPixel {
                t.apply(target)?
            } else {
                target.clone()
            };
            Ok((x, y))
        }
        _ => Ok((input.clone(), target.clone())),
    }
}

/// Mini-batch training with validation-loss early stopping.
///
/// Each batch gradient is the mean of per-example gradients, accumulated in
/// index order, plus the L2 gradient on unfrozen weights. When early
/// stopping fires, the parameters of the best validation epoch are restored.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::config(
            "training and validation sets must be non-empty",
        ));
    }
    let plan = BatchPlan {
        batch_size: config.batch_size,
        shuffle: config.shuffle,
        seed: derive_seed(config.seed, "batching"),
    };
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate, config.reg_strength)?;
    let dropout_base = derive_seed(config.seed, "dropout");
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_layers = net.layers.clone();
    let mut history = TrainHistory {
        records: Vec::new(),
        stop_reason: StopReason::MaxEpochs,
        best_epoch: 0,
    };

    for epoch in 1..=config.epochs {
        let batches = make_batches(train_set.len(), &plan, epoch)?;
        let mut task_loss_total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let mut grads = net.zero_grads();
            let mut batch_loss = 0.0;
            for &i in batch {
                let e = &train_set.examples[i];
                let (x, t) = augmented(config, train_set.task, &e.input, &e.target, epoch, i)?;
                let seed = derive_indexed(dropout_base, &[epoch as u64, b as u64, i as u64]);
                let (value, g) = example_gradients(net, &x, &t, config.loss, Mode::Training, seed)?;
                batch_loss += value;
                accumulate(&mut grads, &g)?;
            }
            task_loss_total += batch_loss;
            scale_grads(&mut grads, 1.0 / batch.len() as f64);
            let penalty = net.add_l2(&mut grads, config.reg_strength)?;
            let value = batch_loss / batch.len() as f64 + penalty;
            let grads_finite = grads.iter().flatten().all(Tensor::all_finite);
            if !value.is_finite() || !grads_finite {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: value,
                    history: Box::new(history),
                });
            }
            net.apply_update(&mut opt, &grads)?;
        }
        let (penalty, _) = crate::optim::l2_penalty(&net.trainable_weights(), config.reg_strength)?;
        let train_loss = task_loss_total / train_set.len() as f64 + penalty;
        let val_loss = dataset_loss(net, val_set, config.loss)?;
        let val_metric = accuracy(net, val_set)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: batches.len() - 1,
                loss: if train_loss.is_finite() {
                    val_loss
                } else {
                    train_loss
                },
                history: Box::new(history),
            });
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_metric,
            iteration: opt.iteration,
        });
        let stop = stopper.observe(val_loss);
        if stopper.improved_last() {
            best_layers.clone_from(&net.layers);
        }
        history.best_epoch = stopper.best_epoch();
        if stop {
            history.stop_reason = StopReason::EarlyStop;
            net.layers = best_layers;
            break;
        }
    }
    Ok(history)
}

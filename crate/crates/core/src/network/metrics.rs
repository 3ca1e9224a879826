use serde::Serialize;

use super::Network;
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::layers::{ActivationKind, Layer};
use crate::tensor::Tensor;

/// Classification metrics plus the trivial baselines they should beat.
///
/// For binary, multiclass and per-pixel tasks the confusion matrix is
/// indexed `[true class][predicted class]`. Multilabel and sequence outputs
/// are scored as independent 0/1 decisions: `accuracy` is the per-label
/// accuracy, the confusion matrix pools every decision into a 2×2 table and
/// precision/recall are per label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub task: Task,
    pub count: usize,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
    /// Accuracy of guessing uniformly at random.
    pub coin_baseline: f64,
    /// Accuracy of always predicting the most frequent class (per label for
    /// multilabel tasks).
    pub majority_baseline: f64,
    /// `max(coin_baseline, majority_baseline)`.
    pub baseline: f64,
}

fn is_sigmoid(layer: Option<&Layer>) -> bool {
    matches!(layer, Some(Layer::Activation(a)) if a.kind == ActivationKind::Sigmoid)
}

fn is_softmax(layer: Option<&Layer>) -> bool {
    matches!(layer, Some(Layer::Softmax(_)))
}

/// Checks that the network head matches the task.
pub(crate) fn check_head(net: &Network, task: Task) -> Result<()> {
    let last = net.layers().last();
    let out = net.output_shape();
    let ok = match task {
        Task::Binary => is_sigmoid(last) && out == [1],
        Task::Multiclass => is_softmax(last) && out.len() == 1,
        Task::Multilabel => is_sigmoid(last) && out.len() == 1,
        Task::PerPixel => is_softmax(last) && out.len() == 3,
        Task::Sequence => true,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::config(format!(
            "task {} needs a matching head; network '{}' ends in {} with output {:?}",
            task.name(),
            net.name,
            last.map_or("nothing", Layer::name),
            out
        )))
    }
}

fn argmax_channels(t: &Tensor) -> Vec<usize> {
    let [c, h, w] = t.shape() else {
        return vec![t.argmax()];
    };
    let (c, hw) = (*c, h * w);
    (0..hw)
        .map(|p| {
            let mut best = 0;
            for k in 1..c {
                if t.data()[k * hw + p] > t.data()[best * hw + p] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Running confusion counts.
struct Tally {
    task: Task,
    classes: usize,
    confusion: Vec<Vec<usize>>,
    /// Multilabel only: per label `[tn, fp, fn, tp]`.
    per_label: Vec<[usize; 4]>,
    examples: usize,
}

impl Tally {
    fn new(task: Task, target_shape: &[usize]) -> Self {
        let classes = match task {
            Task::Binary | Task::Multilabel | Task::Sequence => 2,
            Task::Multiclass | Task::PerPixel => target_shape[0],
        };
        let labels = match task {
            Task::Multilabel | Task::Sequence => target_shape.iter().product(),
            _ => 0,
        };
        Tally {
            task,
            classes,
            confusion: vec![vec![0; classes]; classes],
            per_label: vec![[0; 4]; labels],
            examples: 0,
        }
    }

    fn add(&mut self, pred: &Tensor, target: &Tensor) {
        self.examples += 1;
        match self.task {
            Task::Binary => {
                let (p, t) = (
                    usize::from(pred.data()[0] >= 0.5),
                    usize::from(target.data()[0] >= 0.5),
                );
                self.confusion[t][p] += 1;
            }
            Task::Multiclass | Task::PerPixel => {
                for (t, p) in argmax_channels(target)
                    .into_iter()
                    .zip(argmax_channels(pred))
                {
                    self.confusion[t][p] += 1;
                }
            }
            Task::Multilabel | Task::Sequence => {
                for (l, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
                    let (p, t) = (usize::from(p >= 0.5), usize::from(t >= 0.5));
                    self.confusion[t][p] += 1;
                    self.per_label[l][2 * t + p] += 1;
                }
            }
        }
    }

    fn finish(self) -> Metrics {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let total: usize = self.confusion.iter().flatten().sum();
        let correct: usize = (0..self.classes).map(|k| self.confusion[k][k]).sum();
        let support: Vec<usize> = self.confusion.iter().map(|r| r.iter().sum()).collect();
        let (precision, recall, majority) = if self.per_label.is_empty() {
            let precision = (0..self.classes)
                .map(|k| {
                    ratio(
                        self.confusion[k][k],
                        (0..self.classes).map(|t| self.confusion[t][k]).sum(),
                    )
                })
                .collect();
            let recall = (0..self.classes)
                .map(|k| ratio(self.confusion[k][k], support[k]))
                .collect();
            (
                precision,
                recall,
                ratio(support.iter().copied().max().unwrap_or(0), total),
            )
        } else {
            let precision = self
                .per_label
                .iter()
                .map(|c| ratio(c[3], c[1] + c[3]))
                .collect();
            let recall = self
                .per_label
                .iter()
                .map(|c| ratio(c[3], c[2] + c[3]))
                .collect();
            let n = self.examples;
            let majority = self
                .per_label
                .iter()
                .map(|c| ratio((c[0] + c[1]).max(c[2] + c[3]), n))
                .sum::<f64>()
                / self.per_label.len().max(1) as f64;
            (precision, recall, majority)
        };
        let coin = 1.0 / self.classes as f64;
        Metrics {
            task: self.task,
            count: self.examples,
            accuracy: ratio(correct, total),
            precision,
            recall,
            confusion: self.confusion,
            coin_baseline: coin,
            majority_baseline: majority,
            baseline: coin.max(majority),
        }
    }
}

/// Metrics for precomputed predictions.
pub fn metrics_from_predictions(
    task: Task,
    predictions: &[Tensor],
    targets: &[Tensor],
) -> Result<Metrics> {
    let first = targets
        .first()
        .ok_or_else(|| Error::config("cannot evaluate an empty set"))?;
    if predictions.len() != targets.len() {
        return Err(Error::config(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut tally = Tally::new(task, first.shape());
    for (p, t) in predictions.iter().zip(targets) {
        if p.shape() != t.shape() || t.shape() != first.shape() {
            return Err(Error::config(format!(
                "prediction {:?} does not match target arity {:?}",
                p.shape(),
                t.shape()
            )));
        }
        tally.add(p, t);
    }
    Ok(tally.finish())
}

/// Inference-mode metrics on a labelled set. The set's task must match the
/// network's task and head.
pub fn evaluate(net: &Network, ds: &Dataset) -> Result<Metrics> {
    if ds.task != net.task {
        return Err(Error::config(format!(
            "dataset task {} differs from network task {}",
            ds.task.name(),
            net.task.name()
        )));
    }
    check_head(net, ds.task)?;
    if let Some(t) = ds.target_shape() {
        if t != net.output_shape().as_slice() {
            return Err(Error::config(format!(
                "target arity {t:?} does not match network output {:?}",
                net.output_shape()
            )));
        }
    }
    let preds = ds
        .examples
        .iter()
        .map(|e| net.predict(&e.input))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Tensor> = ds.examples.iter().map(|e| e.target.clone()).collect();
    metrics_from_predictions(ds.task, &preds, &targets)
}

/// Decision accuracy without head checks; used for the per-epoch
/// validation metric.
pub fn accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    let Some(first) = ds.examples.first() else {
        return Ok(0.0);
    };
    let mut tally = Tally::new(ds.task, first.target.shape());
    for e in &ds.examples {
        let p = net.predict(&e.input)?;
        if p.shape() != e.target.shape() {
            return Err(Error::config(format!(
                "network output {:?} does not match target arity {:?}",
                p.shape(),
                e.target.shape()
            )));
        }
        tally.add(&p, &e.target);
    }
    Ok(tally.finish().accuracy)
}

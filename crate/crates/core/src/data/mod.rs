//! Datasets, splits, standardization, augmentation, synthetic generators and
//! the dataset container format.

mod augment;
mod io;
mod synth;

pub use augment::{augment, rotate_nearest, translate, AugmentConfig, Transform};
pub use io::{load_csv, load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC};
pub use synth::{
    gaussian_mixture_2d, parity_sequences, shapes_8x8, synth_segmentation, synth_tools, two_blobs,
    MixtureSpec, GLYPH_CLASSES, SEGMENT_CLASSES,
};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// One sigmoid output, target 0 or 1.
    Binary,
    /// Softmax head, one-hot target.
    Multiclass,
    /// Independent per-output sigmoids, 0/1 indicator targets.
    Multilabel,
    /// Per-pixel softmax over `[C,H,W]`, one-hot target maps.
    PerPixel,
    /// `[T, n]` input sequences with per-step `[T, o]` or final `[o]` targets.
    Sequence,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Binary => "binary",
            Task::Multiclass => "multiclass",
            Task::Multilabel => "multilabel",
            Task::PerPixel => "per_pixel",
            Task::Sequence => "sequence",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Tensor,
    pub target: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub examples: Vec<Example>,
    pub note: String,
}

impl Dataset {
    /// Validates uniform input and target shapes.
    pub fn new(task: Task, examples: Vec<Example>, note: impl Into<String>) -> Result<Self> {
        if let Some(first) = examples.first() {
            for (i, e) in examples.iter().enumerate() {
                if e.input.shape() != first.input.shape()
                    || e.target.shape() != first.target.shape()
                {
                    return Err(Error::dim(format!(
                        "example {i} has input {:?} / target {:?}, expected {:?} / {:?}",
                        e.input.shape(),
                        e.target.shape(),
                        first.input.shape(),
                        first.target.shape()
                    )));
                }
            }
        }
        Ok(Dataset {
            task,
            examples,
            note: note.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn input_shape(&self) -> Option<&[usize]> {
        self.examples.first().map(|e| e.input.shape())
    }

    pub fn target_shape(&self) -> Option<&[usize]> {
        self.examples.first().map(|e| e.target.shape())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            task: self.task,
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            note: self.note.clone(),
        }
    }

    pub fn map_inputs(&self, f: impl Fn(&Tensor) -> Tensor) -> Dataset {
        Dataset {
            task: self.task,
            examples: self
                .examples
                .iter()
                .map(|e| Example {
                    input: f(&e.input),
                    target: e.target.clone(),
                })
                .collect(),
            note: self.note.clone(),
        }
    }
}

/// Train/validation/test fractions plus the assignment seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train", self.train),
            ("val", self.val),
            ("test", self.test),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::config(format!(
                    "{name} fraction {f} must lie in (0, 1)"
                )));
            }
        }
        let total = self.train + self.val + self.test;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split fractions sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    /// Split sizes for `n` examples: validation and test get
    /// `max(1, round(f·n))`, the remainder goes to training.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        if n < 3 {
            return Err(Error::config(format!(
                "cannot split {n} examples three ways"
            )));
        }
        let part = |f: f64| ((f * n as f64).round() as usize).max(1);
        let mut val = part(self.val);
        let mut test = part(self.test);
        while val + test > n - 1 {
            if val >= test {
                val -= 1;
            } else {
                test -= 1;
            }
        }
        Ok((n - val - test, val, test))
    }
}

/// Disjoint, exhaustive, seed-deterministic three-way split. Each split keeps
/// the original example order.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let (n_train, n_val, _) = spec.sizes(ds.len())?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(spec.seed, "split")));
    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..].to_vec(),
    ];
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok((
        ds.subset(&parts[0]),
        ds.subset(&parts[1]),
        ds.subset(&parts[2]),
    ))
}

/// Floor applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature `(x − μ)/σ` fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Tensor,
    /// Already floored at [`STD_FLOOR`].
    pub std: Tensor,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        let first = train
            .examples
            .first()
            .ok_or_else(|| Error::config("cannot fit a standardizer on an empty split"))?;
        let n = train.len() as f64;
        let mut mean = Tensor::zeros_like(&first.input);
        for e in &train.examples {
            mean.add_assign(&e.input)?;
        }
        mean = mean.scale(1.0 / n);
        let mut var = Tensor::zeros_like(&first.input);
        for e in &train.examples {
            for ((v, &x), &m) in var
                .data_mut()
                .iter_mut()
                .zip(e.input.data())
                .zip(mean.data())
            {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.map(|v| (v / n).sqrt().max(STD_FLOOR));
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape() != self.mean.shape() {
            return Err(Error::dim(format!(
                "standardizer fitted on {:?}, got {:?}",
                self.mean.shape(),
                x.shape()
            )));
        }
        let data = x
            .data()
            .iter()
            .zip(self.mean.data())
            .zip(self.std.data())
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn apply_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        let examples = ds
            .examples
            .iter()
            .map(|e| {
                Ok(Example {
                    input: self.apply(&e.input)?,
                    target: e.target.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            task: ds.task,
            examples,
            note: ds.note.clone(),
        })
    }
}

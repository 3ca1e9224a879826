use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::{evaluate, infer_shapes, train, Metrics, Network, TrainConfig, TrainHistory};
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::layers::LayerSpec;

/// A component removed for one ablation variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Toggle {
    /// Every dropout rate set to 0.
    Dropout,
    /// λ_r set to 0.
    L2,
    /// Training-time augmentation disabled.
    Augmentation,
    /// The layer at this index removed from the architecture.
    Layer(usize),
}

impl FromStr for Toggle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dropout" => Ok(Toggle::Dropout),
            "l2" => Ok(Toggle::L2),
            "augmentation" => Ok(Toggle::Augmentation),
            other => match other.strip_prefix("layer:").map(str::parse::<usize>) {
                Some(Ok(i)) => Ok(Toggle::Layer(i)),
                _ => Err(Error::config(format!(
                    "unknown ablation toggle '{other}' (expected dropout, l2, augmentation or layer:N)"
                ))),
            },
        }
    }
}

impl fmt::Display for Toggle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Toggle::Dropout => write!(f, "no-dropout"),
            Toggle::L2 => write!(f, "no-l2"),
            Toggle::Augmentation => write!(f, "no-augmentation"),
            Toggle::Layer(i) => write!(f, "no-layer-{i}"),
        }
    }
}

/// Everything needed to train and score one variant.
#[derive(Debug, Clone)]
pub struct AblationBase {
    pub name: String,
    pub task: Task,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub train: TrainConfig,
    pub train_set: Dataset,
    pub val_set: Dataset,
    pub test_set: Dataset,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub param_count: usize,
    pub final_train_loss: f64,
    pub metrics: Metrics,
    #[serde(skip)]
    pub history: TrainHistory,
}

fn variant(base: &AblationBase, toggle: Toggle) -> Result<(Vec<LayerSpec>, TrainConfig)> {
    let mut layers = base.layers.clone();
    let mut config = base.train.clone();
    match toggle {
        Toggle::Dropout => {
            for l in &mut layers {
                if let LayerSpec::Dropout { rate } = l {
                    *rate = 0.0;
                }
            }
        }
        Toggle::L2 => config.reg_strength = 0.0,
        Toggle::Augmentation => config.augment = None,
        Toggle::Layer(i) => {
            if i >= layers.len() {
                return Err(Error::config(format!(
                    "cannot remove layer {i}: architecture has {} layers",
                    layers.len()
                )));
            }
            layers.remove(i);
            infer_shapes(&base.input_shape, &layers).map_err(|e| {
                Error::config(format!("removing layer {i} breaks the architecture: {e}"))
            })?;
        }
    }
    Ok((layers, config))
}

fn run(
    base: &AblationBase,
    name: String,
    layers: &[LayerSpec],
    config: &TrainConfig,
) -> Result<AblationRow> {
    let mut net = Network::new(
        &base.name,
        base.task,
        base.input_shape.clone(),
        layers,
        config.seed,
    )?;
    let history = train(&mut net, &base.train_set, &base.val_set, config)?;
    Ok(AblationRow {
        variant: name,
        param_count: net.param_count(),
        final_train_loss: history.final_record().map_or(f64::NAN, |r| r.train_loss),
        metrics: evaluate(&net, &base.test_set)?,
        history,
    })
}

/// Trains the base configuration and one variant per toggle, all from the
/// same seed and splits. The base row comes first. Every toggle is
/// validated before anything is trained.
pub fn ablate(base: &AblationBase, toggles: &[Toggle]) -> Result<Vec<AblationRow>> {
    let variants = toggles
        .iter()
        .map(|&t| variant(base, t).map(|v| (t.to_string(), v)))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = vec![run(base, "base".into(), &base.layers, &base.train)?];
    for (name, (layers, config)) in variants {
        rows.push(run(base, name, &layers, &config)?);
    }
    Ok(rows)
}

/// Plain-text comparison table.
pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<18} {:>10} {:>12} {:>10} {:>10}\n",
        "variant", "params", "train_loss", "accuracy", "baseline"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<18} {:>10} {:>12.6} {:>10.4} {:>10.4}\n",
            r.variant, r.param_count, r.final_train_loss, r.metrics.accuracy, r.metrics.baseline
        ));
    }
    out
}

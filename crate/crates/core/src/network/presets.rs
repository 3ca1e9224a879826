//! Named architectures.

use crate::data::Task;
use crate::error::{Error, Result};
use crate::layers::LayerSpec;

pub const PRESETS: &[&str] = &["alexnet-mini", "vgg-mini", "segmenter-mini", "mlp"];

/// Input shape of the tool-presence network.
pub const ALEXNET_MINI_INPUT: [usize; 3] = [3, 64, 64];

fn conv3(filters: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        filters,
        kernel: 3,
        stride: 1,
        padding: 1,
    }
}

fn pool2() -> LayerSpec {
    LayerSpec::MaxPool { size: 2, stride: 2 }
}

fn head(task: Task, outputs: usize) -> Result<Vec<LayerSpec>> {
    match task {
        Task::Binary if outputs == 1 => Ok(vec![LayerSpec::Dense { units: 1 }, LayerSpec::Sigmoid]),
        Task::Binary => Err(Error::config(format!(
            "binary head needs 1 output, got {outputs}"
        ))),
        Task::Multiclass => Ok(vec![
            LayerSpec::Dense { units: outputs },
            LayerSpec::Softmax,
        ]),
        Task::Multilabel => Ok(vec![
            LayerSpec::Dense { units: outputs },
            LayerSpec::Sigmoid,
        ]),
        other => Err(Error::config(format!(
            "no dense classification head for task {}",
            other.name()
        ))),
    }
}

/// Three conv(3×3, pad 1)+ReLU+maxpool(2) blocks with 8→16→32 channels,
/// then dense 128 → 64 → `outputs`. With `outputs = 7` and a multilabel
/// task this is the per-tool presence network on 3×64×64 frames.
pub fn alexnet_mini(task: Task, outputs: usize) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    for c in [8, 16, 32] {
        layers.extend([conv3(c), LayerSpec::Relu, pool2()]);
    }
    layers.extend([
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 128 },
        LayerSpec::Relu,
        LayerSpec::Dense { units: 64 },
        LayerSpec::Relu,
    ]);
    layers.extend(head(task, outputs)?);
    Ok(layers)
}

/// Blocks of two 3×3 convolutions followed by a 2×2 max-pool. The first
/// convolution after every pool doubles the channel count, starting from
/// `base` channels.
pub fn vgg_mini(blocks: usize, base: usize, task: Task, outputs: usize) -> Result<Vec<LayerSpec>> {
    if blocks == 0 || base == 0 {
        return Err(Error::config(
            "vgg-mini needs at least one block and one base channel",
        ));
    }
    let mut layers = Vec::new();
    let mut channels = base;
    for _ in 0..blocks {
        layers.extend([
            conv3(channels),
            LayerSpec::Relu,
            conv3(channels),
            LayerSpec::Relu,
            pool2(),
        ]);
        channels *= 2;
    }
    layers.push(LayerSpec::Flatten);
    layers.extend(head(task, outputs)?);
    Ok(layers)
}

/// Convolutional encoder with one 2× max-pool, nearest-neighbor 2×
/// upsampling decoder and a per-pixel softmax over `classes`.
pub fn segmenter_mini(classes: usize) -> Vec<LayerSpec> {
    vec![
        conv3(8),
        LayerSpec::Relu,
        pool2(),
        conv3(16),
        LayerSpec::Relu,
        LayerSpec::Upsample { factor: 2 },
        conv3(8),
        LayerSpec::Relu,
        LayerSpec::Conv2d {
            filters: classes,
            kernel: 1,
            stride: 1,
            padding: 0,
        },
        LayerSpec::Softmax,
    ]
}

/// Fully connected ReLU layers of the given widths, then a task head.
pub fn mlp(hidden: &[usize], task: Task, outputs: usize) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    for &units in hidden {
        layers.extend([LayerSpec::Dense { units }, LayerSpec::Relu]);
    }
    layers.extend(head(task, outputs)?);
    Ok(layers)
}

/// Resolves a preset name for the given input shape, task and output
/// shape. Image presets flatten nothing themselves; `mlp` flattens
/// non-vector inputs first.
pub fn preset(
    name: &str,
    input_shape: &[usize],
    task: Task,
    output_shape: &[usize],
) -> Result<Vec<LayerSpec>> {
    let outputs: usize = output_shape.iter().product();
    match name {
        "alexnet-mini" => alexnet_mini(task, outputs),
        "vgg-mini" => vgg_mini(2, 8, task, outputs),
        "segmenter-mini" => {
            if task != Task::PerPixel || output_shape.len() != 3 {
                return Err(Error::config(
                    "segmenter-mini needs a per-pixel task with [C,H,W] targets",
                ));
            }
            Ok(segmenter_mini(output_shape[0]))
        }
        "mlp" => {
            let mut layers = if input_shape.len() > 1 {
                vec![LayerSpec::Flatten]
            } else {
                Vec::new()
            };
            layers.extend(mlp(&[16], task, outputs)?);
            Ok(layers)
        }
        other => Err(Error::config(format!(
            "unknown preset '{other}' (expected one of {})",
            PRESETS.join(", ")
        ))),
    }
}

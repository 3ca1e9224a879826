//! Sequential networks: forward/backward propagation over an ordered layer
//! list, plus training, gradient checking, evaluation, saliency, ablation and
//! persistence.

mod ablation;
mod gradcheck;
mod metrics;
mod model_file;
pub mod presets;
mod saliency;
mod train;

pub use ablation::{ablate, format_ablation_table, AblationBase, AblationRow, Toggle};
pub use gradcheck::{compare_with_numeric, gradient_check, GradCheckReport};
pub(crate) use metrics::check_head;
pub use metrics::{accuracy, evaluate, metrics_from_predictions, Metrics};
pub(crate) use model_file::read_header_line;
pub use model_file::{
    load_model, read_model, read_model_from, save_model, write_model, MODEL_MAGIC,
};
pub use saliency::saliency;
pub use train::{
    dataset_loss, train, EarlyStopping, EpochRecord, StopReason, TrainConfig, TrainHistory,
};

use sha2::{Digest, Sha256};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::layers::{Layer, LayerCache, LayerSpec, Mode};
use crate::rng::{rng_from_seed, stream_rng, SeededRng};
use crate::tensor::Tensor;

/// Per-layer parameter gradients, aligned with [`Layer::params`].
pub type ParamGrads = Vec<Vec<Tensor>>;

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ParamGrads,
    /// `∂L/∂x` for the network input.
    pub input: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub name: String,
    pub task: Task,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

/// One row of the shape-inference table.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeRow {
    pub index: usize,
    pub layer: &'static str,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

/// Runs shape inference over a layer list without allocating parameters.
pub fn infer_shapes(input_shape: &[usize], specs: &[LayerSpec]) -> Result<Vec<ShapeRow>> {
    if specs.is_empty() {
        return Err(Error::config("a network needs at least one layer"));
    }
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::config(format!(
            "invalid input shape {input_shape:?}"
        )));
    }
    let mut shape = input_shape.to_vec();
    let mut rows = Vec::with_capacity(specs.len());
    for (index, spec) in specs.iter().enumerate() {
        let out = spec
            .output_shape(&shape)
            .map_err(|e| Error::dim(format!("layer {index} ({}): {e}", spec.name())))?;
        rows.push(ShapeRow {
            index,
            layer: spec.name(),
            params: spec.param_count(&shape),
            output_shape: out.clone(),
        });
        shape = out;
    }
    Ok(rows)
}

/// Renders a shape table with `HxWxC` sizes for image-shaped outputs.
pub fn format_shape_table(input_shape: &[usize], rows: &[ShapeRow]) -> String {
    let fmt = |s: &[usize]| match s {
        [c, h, w] => format!("{h}x{w}x{c}"),
        other => other
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("x"),
    };
    let mut out = format!(
        "{:<5} {:<18} {:>16} {:>10}\n",
        "#", "layer", "output (HxWxC)", "params"
    );
    out.push_str(&format!(
        "{:<5} {:<18} {:>16} {:>10}\n",
        "-",
        "input",
        fmt(input_shape),
        0
    ));
    let mut total = 0;
    for r in rows {
        total += r.params;
        out.push_str(&format!(
            "{:<5} {:<18} {:>16} {:>10}\n",
            r.index,
            r.layer,
            fmt(&r.output_shape),
            r.params
        ));
    }
    out.push_str(&format!("total parameters: {total}\n"));
    out
}

impl Network {
    /// Builds a network from layer specs, drawing initial parameters from the
    /// `init` stream of `seed`.
    pub fn new(
        name: impl Into<String>,
        task: Task,
        input_shape: impl Into<Vec<usize>>,
        specs: &[LayerSpec],
        seed: u64,
    ) -> Result<Self> {
        let input_shape = input_shape.into();
        infer_shapes(&input_shape, specs)?;
        let mut rng = stream_rng(seed, "init");
        let mut shape = input_shape.clone();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = spec.build(&shape, &mut rng)?;
            shape = layer.output_shape(&shape)?;
            layers.push(layer);
        }
        Ok(Network {
            name: name.into(),
            task,
            input_shape,
            layers,
        })
    }

    /// Wraps existing layers, validating that their shapes compose.
    pub fn from_layers(
        name: impl Into<String>,
        task: Task,
        input_shape: impl Into<Vec<usize>>,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        let input_shape = input_shape.into();
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::dim(format!("layer {i} ({}): {e}", layer.name())))?;
        }
        Ok(Network {
            name: name.into(),
            task,
            input_shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.shapes().pop().expect("non-empty network")
    }

    /// Inferred output shape after each layer.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        self.layers
            .iter()
            .map(|l| {
                shape = l.output_shape(&shape).expect("validated at construction");
                shape.clone()
            })
            .collect()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to one layer's parameters and hyperparameters. Callers
    /// must keep the layer's input and output shapes unchanged.
    pub fn layer_mut(&mut self, index: usize) -> Option<&mut Layer> {
        self.layers.get_mut(index)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn shape_table(&self) -> Vec<ShapeRow> {
        infer_shapes(&self.input_shape, &self.specs()).expect("validated at construction")
    }

    /// Marks the given layers frozen: they still propagate gradients to
    /// earlier layers but their parameters are never updated.
    pub fn freeze(&mut self, indices: &[usize]) -> Result<()> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.layers.len()) {
            return Err(Error::config(format!(
                "layer index {bad} out of range (network has {} layers)",
                self.layers.len()
            )));
        }
        for &i in indices {
            self.layers[i].set_frozen(true);
        }
        Ok(())
    }

    pub fn unfreeze_all(&mut self) {
        self.layers.iter_mut().for_each(|l| l.set_frozen(false));
    }

    /// Replaces the parameters of the first `count` layers (all layers when
    /// `None`) with those of `source`. Every shape must match; otherwise
    /// nothing is changed and all mismatches are reported.
    pub fn load_pretrained(&mut self, source: &Network, count: Option<usize>) -> Result<()> {
        let count = count.unwrap_or(self.layers.len());
        let mut problems = Vec::new();
        if count > self.layers.len() || count > source.layers.len() {
            problems.push(format!(
                "requested {count} layers; target has {}, source has {}",
                self.layers.len(),
                source.layers.len()
            ));
        } else {
            for i in 0..count {
                let (dst, src) = (&self.layers[i], &source.layers[i]);
                if dst.name() != src.name() {
                    problems.push(format!("layer {i}: kind {} vs {}", dst.name(), src.name()));
                    continue;
                }
                for (pi, (a, b)) in dst.params().iter().zip(src.params()).enumerate() {
                    if a.shape() != b.shape() {
                        problems.push(format!(
                            "layer {i} param {pi}: shape {:?} vs {:?}",
                            a.shape(),
                            b.shape()
                        ));
                    }
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Load(problems));
        }
        for i in 0..count {
            let src: Vec<Tensor> = source.layers[i].params().into_iter().cloned().collect();
            for (dst, s) in self.layers[i].params_mut().into_iter().zip(src) {
                *dst = s;
            }
        }
        Ok(())
    }

    pub fn forward(
        &self,
        x: &Tensor,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Tensor, Vec<LayerCache>)> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::dim(format!(
                "network '{}' expects input {:?}, got {:?}",
                self.name,
                self.input_shape,
                x.shape()
            )));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (next, cache) = layer
                .forward(&cur, mode, rng)
                .map_err(|e| Error::dim(format!("layer {i} ({}): {e}", layer.name())))?;
            caches.push(cache);
            cur = next;
        }
        Ok((cur, caches))
    }

    /// Inference-mode forward pass.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        // Inference never draws from the generator.
        let mut rng = rng_from_seed(0);
        Ok(self.forward(x, Mode::Inference, &mut rng)?.0)
    }

    /// Reverse-order chain rule. Consumes the caches of the preceding forward
    /// call. Frozen layers report zero parameter gradients.
    pub fn backward(&self, caches: Vec<LayerCache>, loss_grad: &Tensor) -> Result<Gradients> {
        if caches.len() != self.layers.len() {
            return Err(Error::state(format!(
                "backward needs {} caches from a forward pass, got {}",
                self.layers.len(),
                caches.len()
            )));
        }
        let mut grads: ParamGrads = vec![Vec::new(); self.layers.len()];
        let mut g = loss_grad.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let (gin, gp) = layer.backward(cache, &g).map_err(|e| match e {
                Error::State(m) => Error::State(format!("layer {i}: {m}")),
                Error::Dimension(m) => {
                    Error::Dimension(format!("layer {i} ({}): {m}", layer.name()))
                }
                other => other,
            })?;
            grads[i] = if layer.is_frozen() {
                gp.iter().map(Tensor::zeros_like).collect()
            } else {
                gp
            };
            g = gin;
        }
        Ok(Gradients {
            params: grads,
            input: g,
        })
    }

    pub fn zero_grads(&self) -> ParamGrads {
        self.layers
            .iter()
            .map(|l| l.params().into_iter().map(Tensor::zeros_like).collect())
            .collect()
    }

    /// All weight tensors (no biases) of unfrozen layers.
    pub fn trainable_weights(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .filter(|l| !l.is_frozen())
            .flat_map(|l| {
                l.params()
                    .into_iter()
                    .zip(l.weight_flags())
                    .filter_map(|(p, w)| w.then_some(p))
            })
            .collect()
    }

    /// `Σ‖w‖²` over every weight tensor (frozen or not, biases excluded).
    pub fn weight_norm_squared(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.params().into_iter().zip(l.weight_flags()))
            .filter(|(_, w)| *w)
            .map(|(p, _)| p.sum_squares())
            .sum()
    }

    /// Applies an optimizer step to every unfrozen parameter using `grads`.
    pub fn apply_update(
        &mut self,
        opt: &mut crate::optim::OptimizerState,
        grads: &ParamGrads,
    ) -> Result<()> {
        let mut params = Vec::new();
        let mut flat = Vec::new();
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            if layer.is_frozen() {
                continue;
            }
            for (p, gi) in layer.params_mut().into_iter().zip(g) {
                params.push(p);
                flat.push(gi.clone());
            }
        }
        opt.step(params, &flat)
    }

    /// Adds `2·λ_r·w` to the gradients of unfrozen weights and returns the
    /// penalty value.
    pub fn add_l2(&self, grads: &mut ParamGrads, reg_strength: f64) -> Result<f64> {
        let (value, _) = crate::optim::l2_penalty(&self.trainable_weights(), reg_strength)?;
        if reg_strength == 0.0 {
            return Ok(value);
        }
        for (layer, g) in self.layers.iter().zip(grads.iter_mut()) {
            if layer.is_frozen() {
                continue;
            }
            for ((p, gi), is_weight) in layer
                .params()
                .into_iter()
                .zip(g.iter_mut())
                .zip(layer.weight_flags())
            {
                if is_weight {
                    gi.axpy(2.0 * reg_strength, p)?;
                }
            }
        }
        Ok(value)
    }

    /// SHA-256 over every parameter's bytes, per layer.
    pub fn layer_checksums(&self) -> Vec<String> {
        self.layers
            .iter()
            .map(|l| {
                let mut h = Sha256::new();
                for p in l.params() {
                    for v in p.data() {
                        h.update(v.to_le_bytes());
                    }
                }
                hex::encode(h.finalize())
            })
            .collect()
    }

    pub(crate) fn has_step(&self) -> bool {
        self.layers.iter().any(Layer::is_step)
    }
}

/// `acc += g`, elementwise over matching gradient lists.
pub fn accumulate(acc: &mut ParamGrads, g: &ParamGrads) -> Result<()> {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            x.add_assign(y)?;
        }
    }
    Ok(())
}

pub fn scale_grads(g: &mut ParamGrads, s: f64) {
    for t in g.iter_mut().flatten() {
        t.data_mut().iter_mut().for_each(|v| *v *= s);
    }
}

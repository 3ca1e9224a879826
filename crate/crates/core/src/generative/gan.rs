use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::{ActivationKind, Layer, Mode};
use crate::network::Network;
use crate::numeric::{max_relative_error, numeric_gradient};
use crate::optim::{loss, make_batches, BatchPlan, LossKind, OptimizerKind, OptimizerState};
use crate::rng::{derive_indexed, derive_seed, rng_from_seed, SeededRng};
use crate::tensor::Tensor;

/// A generator mapping noise `[z]` to samples and a discriminator mapping
/// samples to a probability of being real.
#[derive(Debug, Clone, PartialEq)]
pub struct GanPair {
    pub generator: Network,
    pub discriminator: Network,
}

impl GanPair {
    pub fn new(generator: Network, discriminator: Network) -> Result<Self> {
        if generator.input_shape().len() != 1 {
            return Err(Error::config(format!(
                "generator input must be a noise vector, got {:?}",
                generator.input_shape()
            )));
        }
        if generator.output_shape() != discriminator.input_shape() {
            return Err(Error::config(format!(
                "generator produces {:?} but the discriminator expects {:?}",
                generator.output_shape(),
                discriminator.input_shape()
            )));
        }
        let sigmoid_head = matches!(
            discriminator.layers().last(),
            Some(Layer::Activation(a)) if a.kind == ActivationKind::Sigmoid
        );
        if !sigmoid_head || discriminator.output_shape() != [1] {
            return Err(Error::config(
                "the discriminator must end in a single sigmoid output",
            ));
        }
        Ok(GanPair {
            generator,
            discriminator,
        })
    }

    pub fn noise_extent(&self) -> usize {
        self.generator.input_shape()[0]
    }

    fn noise(&self, count: usize, rng: &mut SeededRng) -> Vec<Tensor> {
        (0..count)
            .map(|_| Tensor::standard_normal([self.noise_extent()], rng))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct GanOptimizers {
    pub discriminator: OptimizerState,
    pub generator: OptimizerState,
}

impl GanOptimizers {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        Ok(GanOptimizers {
            discriminator: OptimizerState::new(kind, learning_rate, 0.0)?,
            generator: OptimizerState::new(kind, learning_rate, 0.0)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanStepStats {
    pub d_loss: f64,
    pub g_loss: f64,
    /// Discriminator accuracy on the real and generated batch, measured
    /// before its update.
    pub d_accuracy: f64,
}

fn add_into(acc: &mut [Vec<Tensor>], g: &[Vec<Tensor>], scale: f64) -> Result<()> {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            x.axpy(scale, y)?;
        }
    }
    Ok(())
}

/// One adversarial step: a discriminator update on real (label 1) versus
/// generated (label 0) samples, then a generator update minimising
/// `−ln D(G(z))` on fresh noise. Each update touches only its own network.
pub fn gan_train_step(
    pair: &mut GanPair,
    real: &[Tensor],
    rng: &mut SeededRng,
    optimizers: &mut GanOptimizers,
) -> Result<GanStepStats> {
    if real.is_empty() {
        return Err(Error::config("real batch is empty"));
    }
    let m = real.len();
    let one = Tensor::vector(&[1.0]);
    let zero = Tensor::vector(&[0.0]);

    let fakes = pair
        .noise(m, rng)
        .iter()
        .map(|z| Ok(pair.generator.forward(z, Mode::Training, rng)?.0))
        .collect::<Result<Vec<_>>>()?;
    let mut d_grads = pair.discriminator.zero_grads();
    let (mut d_loss, mut correct) = (0.0, 0usize);
    let scale = 1.0 / (2 * m) as f64;
    for (x, target, is_real) in real
        .iter()
        .map(|x| (x, &one, true))
        .chain(fakes.iter().map(|x| (x, &zero, false)))
    {
        let (p, caches) = pair.discriminator.forward(x, Mode::Training, rng)?;
        if (p.data()[0] >= 0.5) == is_real {
            correct += 1;
        }
        let (l, dl) = loss(LossKind::BinaryCrossEntropy, &p, target)?;
        d_loss += l * scale;
        add_into(
            &mut d_grads,
            &pair.discriminator.backward(caches, &dl)?.params,
            scale,
        )?;
    }

    let mut g_grads = pair.generator.zero_grads();
    let mut g_loss = 0.0;
    let inv = 1.0 / m as f64;
    for z in pair.noise(m, rng) {
        let (x, g_caches) = pair.generator.forward(&z, Mode::Training, rng)?;
        let (p, d_caches) = pair.discriminator.forward(&x, Mode::Training, rng)?;
        let (l, dl) = loss(LossKind::BinaryCrossEntropy, &p, &one)?;
        g_loss += l * inv;
        let dx = pair.discriminator.backward(d_caches, &dl)?.input;
        add_into(
            &mut g_grads,
            &pair.generator.backward(g_caches, &dx)?.params,
            inv,
        )?;
    }
    if !d_loss.is_finite() || !g_loss.is_finite() {
        return Err(Error::Numeric(format!(
            "adversarial losses became non-finite: d {d_loss}, g {g_loss}"
        )));
    }
    pair.discriminator
        .apply_update(&mut optimizers.discriminator, &d_grads)?;
    pair.generator
        .apply_update(&mut optimizers.generator, &g_grads)?;
    Ok(GanStepStats {
        d_loss,
        g_loss,
        d_accuracy: correct as f64 / (2 * m) as f64,
    })
}

/// `count` generated samples stacked along a new leading axis.
pub fn gan_sample(pair: &GanPair, count: usize, rng: &mut SeededRng) -> Result<Tensor> {
    if count == 0 {
        return Err(Error::config("sample count must be at least 1"));
    }
    let samples = pair
        .noise(count, rng)
        .iter()
        .map(|z| pair.generator.predict(z))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&samples)
}

/// Accuracy of the discriminator on `real` plus as many fresh generated
/// samples, thresholding at 0.5.
pub fn discriminator_accuracy(pair: &GanPair, real: &[Tensor], rng: &mut SeededRng) -> Result<f64> {
    let mut correct = 0usize;
    for x in real {
        if pair.discriminator.predict(x)?.data()[0] >= 0.5 {
            correct += 1;
        }
    }
    for z in pair.noise(real.len(), rng) {
        let x = pair.generator.predict(&z)?;
        if pair.discriminator.predict(&x)?.data()[0] < 0.5 {
            correct += 1;
        }
    }
    Ok(correct as f64 / (2 * real.len()) as f64)
}

/// Checks the generator gradient of `−ln D(G(z))`, taken through the
/// discriminator, against finite differences over every generator parameter
/// and the noise vector. Returns the largest relative error.
pub fn gan_gradient_error(pair: &GanPair, z: &Tensor, eps: f64) -> Result<f64> {
    let one = Tensor::vector(&[1.0]);
    let objective = |g: &Network, z: &Tensor| -> Result<(f64, Vec<u64>)> {
        let mut rng = rng_from_seed(0);
        let (x, caches) = g.forward(z, Mode::Training, &mut rng)?;
        let (p, d_caches) = pair.discriminator.forward(&x, Mode::Training, &mut rng)?;
        let mut sig = Vec::new();
        for c in caches.iter().chain(&d_caches) {
            c.kink_signature(&mut sig);
        }
        Ok((loss(LossKind::BinaryCrossEntropy, &p, &one)?.0, sig))
    };
    let mut rng = rng_from_seed(0);
    let (x, g_caches) = pair.generator.forward(z, Mode::Training, &mut rng)?;
    let (p, d_caches) = pair.discriminator.forward(&x, Mode::Training, &mut rng)?;
    let (_, dl) = loss(LossKind::BinaryCrossEntropy, &p, &one)?;
    let dx = pair.discriminator.backward(d_caches, &dl)?.input;
    let grads = pair.generator.backward(g_caches, &dx)?;

    let mut worst = max_relative_error(
        &grads.input,
        &numeric_gradient(z, eps, |zp| objective(&pair.generator, zp))?,
    );
    for (li, layer_grads) in grads.params.iter().enumerate() {
        for (pi, g) in layer_grads.iter().enumerate() {
            let base = pair.generator.layers()[li].params()[pi].clone();
            let numeric = numeric_gradient(&base, eps, |pp| {
                let mut gen = pair.generator.clone();
                *gen.layer_mut(li).expect("layer index").params_mut()[pi] = pp.clone();
                objective(&gen, z)
            })?;
            worst = worst.max(max_relative_error(g, &numeric));
        }
    }
    Ok(worst)
}

fn default_batch_size() -> usize {
    32
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adaptive
}

fn default_learning_rate() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanTrainConfig {
    pub steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl GanTrainConfig {
    pub fn new(steps: usize) -> Self {
        GanTrainConfig {
            steps,
            batch_size: default_batch_size(),
            optimizer: default_optimizer(),
            learning_rate: default_learning_rate(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::config("steps and batch size must be at least 1"));
        }
        OptimizerState::new(self.optimizer, self.learning_rate, 0.0).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanHistory {
    pub steps: Vec<GanStepStats>,
}

impl GanHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,d_loss,g_loss,d_accuracy\n");
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                s.d_loss,
                s.g_loss,
                s.d_accuracy
            ));
        }
        out
    }
}

/// Alternating adversarial training on the inputs of `data` (targets are
/// ignored). Real batches cycle through shuffled epochs; noise for step `k`
/// comes from the `generator` stream indexed by `k`.
pub fn train_gan(
    pair: &mut GanPair,
    data: &Dataset,
    config: &GanTrainConfig,
) -> Result<GanHistory> {
    config.validate()?;
    if data.input_shape() != Some(pair.discriminator.input_shape()) {
        return Err(Error::config(format!(
            "data inputs {:?} do not match the discriminator input {:?}",
            data.input_shape(),
            pair.discriminator.input_shape()
        )));
    }
    if config.batch_size > data.len() {
        return Err(Error::config(format!(
            "batch size {} exceeds the {} real examples",
            config.batch_size,
            data.len()
        )));
    }
    let plan = BatchPlan {
        batch_size: config.batch_size,
        shuffle: true,
        seed: derive_seed(config.seed, "batching"),
    };
    let noise_base = derive_seed(config.seed, "generator");
    let mut optimizers = GanOptimizers::new(config.optimizer, config.learning_rate)?;
    let mut history = GanHistory { steps: Vec::new() };
    let mut epoch = 0;
    while history.steps.len() < config.steps {
        epoch += 1;
        for batch in make_batches(data.len(), &plan, epoch)? {
            if history.steps.len() == config.steps {
                break;
            }
            let real: Vec<Tensor> = batch
                .iter()
                .map(|&i| data.examples[i].input.clone())
                .collect();
            let mut rng = rng_from_seed(derive_indexed(noise_base, &[history.steps.len() as u64]));
            history
                .steps
                .push(gan_train_step(pair, &real, &mut rng, &mut optimizers)?);
        }
    }
    Ok(history)
}

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::network::{Network, ParamGrads};
use crate::numeric::{max_relative_error, numeric_gradient};
use crate::optim::{loss, make_batches, BatchPlan, LossKind, OptimizerKind, OptimizerState};
use crate::rng::{derive_indexed, derive_seed, rng_from_seed, SeededRng};
use crate::tensor::Tensor;

/// Encoder/decoder pair. A plain encoder emits the code `[L]`; a variational
/// encoder emits `[2L]`: the latent mean followed by the log-spread `s`, with
/// spread `σ = exp(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderPair {
    pub encoder: Network,
    pub decoder: Network,
    pub latent: usize,
    pub variational: bool,
    /// Weight of the latent divergence term; ignored by plain pairs.
    pub beta: f64,
}

/// Result of one encode/decode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoded {
    pub reconstruction: Tensor,
    /// The code fed to the decoder.
    pub code: Tensor,
    /// Latent mean and log-spread (variational pairs only).
    pub mean: Option<Tensor>,
    pub log_spread: Option<Tensor>,
    pub reconstruction_loss: f64,
    pub divergence: f64,
    /// `reconstruction_loss + β·divergence`.
    pub loss: f64,
}

/// `½ Σ (μ² + e^{2s} − 1 − 2s)`: divergence of `N(μ, e^{2s})` from the unit
/// reference. Zero exactly at `μ = 0, s = 0`.
pub fn latent_divergence(mean: &[f64], log_spread: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(log_spread)
        .map(|(&m, &s)| m * m + (2.0 * s).exp() - 1.0 - 2.0 * s)
        .sum::<f64>()
}

impl AutoencoderPair {
    pub fn new(encoder: Network, decoder: Network, variational: bool, beta: f64) -> Result<Self> {
        let pair = Self::build(encoder, decoder, variational, beta)?;
        let d: usize = pair.encoder.input_shape().iter().product();
        if pair.latent >= d {
            return Err(Error::config(format!(
                "latent extent {} must be smaller than the input extent {d}",
                pair.latent
            )));
        }
        Ok(pair)
    }

    /// Like [`AutoencoderPair::new`] but allows a latent as wide as the input,
    /// for sanity configurations such as identity maps.
    pub fn diagnostic(
        encoder: Network,
        decoder: Network,
        variational: bool,
        beta: f64,
    ) -> Result<Self> {
        Self::build(encoder, decoder, variational, beta)
    }

    fn build(encoder: Network, decoder: Network, variational: bool, beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::config(format!(
                "β = {beta} must be finite and non-negative"
            )));
        }
        let code = encoder.output_shape();
        if code.len() != 1 {
            return Err(Error::config(format!(
                "encoder must produce a vector, got {code:?}"
            )));
        }
        let latent = if variational {
            if !code[0].is_multiple_of(2) {
                return Err(Error::config(format!(
                    "variational encoder output {} must hold a mean and a log-spread of equal extent",
                    code[0]
                )));
            }
            code[0] / 2
        } else {
            code[0]
        };
        if decoder.input_shape() != [latent] {
            return Err(Error::config(format!(
                "decoder expects {:?} but the latent extent is {latent}",
                decoder.input_shape()
            )));
        }
        if decoder.output_shape() != encoder.input_shape() {
            return Err(Error::config(format!(
                "decoder produces {:?} but inputs are {:?}",
                decoder.output_shape(),
                encoder.input_shape()
            )));
        }
        Ok(AutoencoderPair {
            encoder,
            decoder,
            latent,
            variational,
            beta,
        })
    }

    /// Draws the reparameterization noise for one example.
    pub fn draw_noise(&self, rng: &mut SeededRng) -> Option<Tensor> {
        self.variational
            .then(|| Tensor::standard_normal([self.latent], rng))
    }
}

struct Pass {
    out: Autoencoded,
    enc_caches: Vec<crate::layers::LayerCache>,
    dec_caches: Vec<crate::layers::LayerCache>,
    recon_grad: Tensor,
    noise: Option<Tensor>,
}

fn pass(
    pair: &AutoencoderPair,
    x: &Tensor,
    noise: Option<&Tensor>,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<Pass> {
    let (h, enc_caches) = pair.encoder.forward(x, mode, rng)?;
    let l = pair.latent;
    let (code, mean, log_spread, divergence) = if pair.variational {
        let mean = Tensor::new([l], h.data()[..l].to_vec())?;
        let s = Tensor::new([l], h.data()[l..].to_vec())?;
        let code = match noise {
            None => mean.clone(),
            Some(e) => {
                if e.shape() != [l] {
                    return Err(Error::dim(format!(
                        "noise must have extent {l}, got {:?}",
                        e.shape()
                    )));
                }
                let data = (0..l)
                    .map(|k| mean.data()[k] + s.data()[k].exp() * e.data()[k])
                    .collect();
                Tensor::new([l], data)?
            }
        };
        let div = latent_divergence(mean.data(), s.data());
        (code, Some(mean), Some(s), div)
    } else {
        (h, None, None, 0.0)
    };
    let (reconstruction, dec_caches) = pair.decoder.forward(&code, mode, rng)?;
    let (reconstruction_loss, recon_grad) = loss(LossKind::MeanSquaredError, &reconstruction, x)?;
    let total = if pair.variational && pair.beta != 0.0 {
        reconstruction_loss + pair.beta * divergence
    } else {
        reconstruction_loss
    };
    Ok(Pass {
        out: Autoencoded {
            reconstruction,
            code,
            mean,
            log_spread,
            reconstruction_loss,
            divergence,
            loss: total,
        },
        enc_caches,
        dec_caches,
        recon_grad,
        noise: noise.cloned(),
    })
}

/// Encodes and decodes `x`. For a variational pair the code is
/// `μ + exp(s)⊙ε` with the given noise `ε`, or `μ` when `noise` is `None`.
pub fn autoencode(
    pair: &AutoencoderPair,
    x: &Tensor,
    noise: Option<&Tensor>,
) -> Result<Autoencoded> {
    Ok(pass(pair, x, noise, Mode::Inference, &mut rng_from_seed(0))?.out)
}

/// Forward pass plus encoder and decoder parameter gradients of the total
/// loss.
pub fn autoencoder_gradients(
    pair: &AutoencoderPair,
    x: &Tensor,
    noise: Option<&Tensor>,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<(Autoencoded, ParamGrads, ParamGrads)> {
    let p = pass(pair, x, noise, mode, rng)?;
    let dec = pair.decoder.backward(p.dec_caches, &p.recon_grad)?;
    let dcode = dec.input;
    let enc_grad = match (&p.out.mean, &p.out.log_spread) {
        (Some(mean), Some(s)) => {
            let l = pair.latent;
            let mut g = vec![0.0; 2 * l];
            g[..l].copy_from_slice(dcode.data());
            if let Some(e) = &p.noise {
                for k in 0..l {
                    g[l + k] = dcode.data()[k] * s.data()[k].exp() * e.data()[k];
                }
            }
            if pair.beta != 0.0 {
                for k in 0..l {
                    g[k] += pair.beta * mean.data()[k];
                    g[l + k] += pair.beta * ((2.0 * s.data()[k]).exp() - 1.0);
                }
            }
            Tensor::new([2 * l], g)?
        }
        _ => dcode,
    };
    let enc = pair.encoder.backward(p.enc_caches, &enc_grad)?;
    Ok((p.out, enc.params, dec.params))
}

/// Decodes `count` latent draws from the unit reference distribution and
/// stacks them along a new leading axis.
pub fn vae_generate(pair: &AutoencoderPair, count: usize, rng: &mut SeededRng) -> Result<Tensor> {
    if count == 0 {
        return Err(Error::config("sample count must be at least 1"));
    }
    let samples = (0..count)
        .map(|_| {
            pair.decoder
                .predict(&Tensor::standard_normal([pair.latent], rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&samples)
}

/// Checks [`autoencoder_gradients`] against finite differences of the total
/// loss over every encoder and decoder parameter, holding `noise` fixed.
pub fn autoencoder_gradient_error(
    pair: &AutoencoderPair,
    x: &Tensor,
    noise: Option<&Tensor>,
    eps: f64,
) -> Result<f64> {
    let objective = |p: &AutoencoderPair| -> Result<(f64, Vec<u64>)> {
        let r = pass(p, x, noise, Mode::Training, &mut rng_from_seed(0))?;
        let mut sig = Vec::new();
        for c in r.enc_caches.iter().chain(&r.dec_caches) {
            c.kink_signature(&mut sig);
        }
        Ok((r.out.loss, sig))
    };
    let (_, enc, dec) =
        autoencoder_gradients(pair, x, noise, Mode::Training, &mut rng_from_seed(0))?;
    let mut worst: f64 = 0.0;
    for (which, grads) in [(0, &enc), (1, &dec)] {
        for (li, layer_grads) in grads.iter().enumerate() {
            for (pi, g) in layer_grads.iter().enumerate() {
                let net = if which == 0 {
                    &pair.encoder
                } else {
                    &pair.decoder
                };
                let base = net.layers()[li].params()[pi].clone();
                let numeric = numeric_gradient(&base, eps, |pp| {
                    let mut q = pair.clone();
                    let net = if which == 0 {
                        &mut q.encoder
                    } else {
                        &mut q.decoder
                    };
                    *net.layer_mut(li).expect("layer index").params_mut()[pi] = pp.clone();
                    objective(&q)
                })?;
                worst = worst.max(max_relative_error(g, &numeric));
            }
        }
    }
    Ok(worst)
}

fn default_batch_size() -> usize {
    16
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adaptive
}

fn default_learning_rate() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderTrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AutoencoderTrainConfig {
    pub fn new(epochs: usize) -> Self {
        AutoencoderTrainConfig {
            epochs,
            batch_size: default_batch_size(),
            optimizer: default_optimizer(),
            learning_rate: default_learning_rate(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be at least 1"));
        }
        OptimizerState::new(self.optimizer, self.learning_rate, 0.0).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Noise-free total loss on the validation split.
    pub val_loss: f64,
    pub val_reconstruction: f64,
    pub val_divergence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderHistory {
    pub records: Vec<AutoencoderRecord>,
}

impl AutoencoderHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_reconstruction,val_divergence\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.val_reconstruction, r.val_divergence
            ));
        }
        out
    }
}

/// Mean noise-free `(total, reconstruction, divergence)` over a dataset.
pub fn autoencoder_loss(pair: &AutoencoderPair, ds: &Dataset) -> Result<(f64, f64, f64)> {
    let (mut t, mut r, mut d) = (0.0, 0.0, 0.0);
    for e in &ds.examples {
        let out = autoencode(pair, &e.input, None)?;
        t += out.loss;
        r += out.reconstruction_loss;
        d += out.divergence;
    }
    let n = ds.len() as f64;
    Ok((t / n, r / n, d / n))
}

/// Mini-batch training of the encoder and decoder together. The
/// reparameterization noise for example `i` in epoch `e` comes from the
/// `generator` stream indexed by `(e, i)`.
pub fn train_autoencoder(
    pair: &mut AutoencoderPair,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &AutoencoderTrainConfig,
) -> Result<AutoencoderHistory> {
    config.validate()?;
    for ds in [train_set, val_set] {
        if ds.input_shape() != Some(pair.encoder.input_shape()) {
            return Err(Error::config(format!(
                "data inputs {:?} do not match the encoder input {:?}",
                ds.input_shape(),
                pair.encoder.input_shape()
            )));
        }
    }
    if config.batch_size > train_set.len() {
        return Err(Error::config(format!(
            "batch size {} exceeds the {} training examples",
            config.batch_size,
            train_set.len()
        )));
    }
    let plan = BatchPlan {
        batch_size: config.batch_size,
        shuffle: true,
        seed: derive_seed(config.seed, "batching"),
    };
    let noise_base = derive_seed(config.seed, "generator");
    let dropout_base = derive_seed(config.seed, "dropout");
    let mut enc_opt = OptimizerState::new(config.optimizer, config.learning_rate, 0.0)?;
    let mut dec_opt = OptimizerState::new(config.optimizer, config.learning_rate, 0.0)?;
    let mut history = AutoencoderHistory {
        records: Vec::new(),
    };
    for epoch in 1..=config.epochs {
        let mut total = 0.0;
        for batch in make_batches(train_set.len(), &plan, epoch)? {
            let mut enc_acc = pair.encoder.zero_grads();
            let mut dec_acc = pair.decoder.zero_grads();
            for &i in &batch {
                let coords = [epoch as u64, i as u64];
                let noise =
                    pair.draw_noise(&mut rng_from_seed(derive_indexed(noise_base, &coords)));
                let mut rng = rng_from_seed(derive_indexed(dropout_base, &coords));
                let (out, enc, dec) = autoencoder_gradients(
                    pair,
                    &train_set.examples[i].input,
                    noise.as_ref(),
                    Mode::Training,
                    &mut rng,
                )?;
                total += out.loss;
                crate::network::accumulate(&mut enc_acc, &enc)?;
                crate::network::accumulate(&mut dec_acc, &dec)?;
            }
            let inv = 1.0 / batch.len() as f64;
            crate::network::scale_grads(&mut enc_acc, inv);
            crate::network::scale_grads(&mut dec_acc, inv);
            if !enc_acc
                .iter()
                .chain(&dec_acc)
                .flatten()
                .all(Tensor::all_finite)
            {
                return Err(Error::Numeric(format!(
                    "autoencoder gradients became non-finite in epoch {epoch}"
                )));
            }
            pair.encoder.apply_update(&mut enc_opt, &enc_acc)?;
            pair.decoder.apply_update(&mut dec_opt, &dec_acc)?;
        }
        let (val_loss, val_reconstruction, val_divergence) = autoencoder_loss(pair, val_set)?;
        let train_loss = total / train_set.len() as f64;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "autoencoder loss became non-finite in epoch {epoch}"
            )));
        }
        history.records.push(AutoencoderRecord {
            epoch,
            train_loss,
            val_loss,
            val_reconstruction,
            val_divergence,
        });
    }
    Ok(history)
}

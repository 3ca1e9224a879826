//! Toy generative models: an adversarial generator/discriminator pair and a
//! plain or variational autoencoder.
//!
//! The discriminator minimises binary cross-entropy with real = 1 and
//! generated = 0; the generator minimises the non-saturating `−ln D(G(z))`.
//! The variational divergence is the closed form for independent Gaussian
//! coordinates against the zero-mean unit-spread reference.

mod gan;
mod vae;

pub use gan::{
    discriminator_accuracy, gan_gradient_error, gan_sample, gan_train_step, train_gan, GanHistory,
    GanOptimizers, GanPair, GanStepStats, GanTrainConfig,
};
pub use vae::{
    autoencode, autoencoder_gradient_error, autoencoder_gradients, autoencoder_loss,
    latent_divergence, train_autoencoder, vae_generate, Autoencoded, AutoencoderHistory,
    AutoencoderPair, AutoencoderRecord, AutoencoderTrainConfig,
};

#[cfg(test)]
mod tests;

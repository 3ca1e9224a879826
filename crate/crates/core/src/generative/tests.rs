use super::*;
use crate::data::{gaussian_mixture_2d, Dataset, Example, MixtureSpec, Task};
use crate::error::Error;
use crate::layers::{Dense, Layer, LayerSpec, Mode};
use crate::network::Network;
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

fn generator(seed: u64) -> Network {
    let specs = [
        LayerSpec::Dense { units: 8 },
        LayerSpec::Tanh,
        LayerSpec::Dense { units: 2 },
    ];
    Network::new("generator", Task::Sequence, vec![2], &specs, seed).unwrap()
}

fn discriminator(seed: u64) -> Network {
    let specs = [
        LayerSpec::Dense { units: 8 },
        LayerSpec::Tanh,
        LayerSpec::Dense { units: 1 },
        LayerSpec::Sigmoid,
    ];
    Network::new("discriminator", Task::Binary, vec![2], &specs, seed).unwrap()
}

fn constant_generator(value: [f64; 2]) -> Network {
    let d = Dense::new(Tensor::zeros([2, 2]), Tensor::vector(&value)).unwrap();
    Network::from_layers("constant", Task::Sequence, vec![2], vec![Layer::Dense(d)]).unwrap()
}

fn inputs(ds: &Dataset) -> Vec<Tensor> {
    ds.examples.iter().map(|e| e.input.clone()).collect()
}

#[test]
fn pair_validation() {
    assert!(GanPair::new(generator(0), discriminator(0)).is_ok());
    let no_sigmoid = Network::new(
        "d",
        Task::Binary,
        vec![2],
        &[LayerSpec::Dense { units: 1 }],
        0,
    )
    .unwrap();
    assert!(matches!(
        GanPair::new(generator(0), no_sigmoid),
        Err(Error::Config(_))
    ));
    let wide = Network::new(
        "d",
        Task::Binary,
        vec![3],
        &[LayerSpec::Dense { units: 1 }, LayerSpec::Sigmoid],
        0,
    )
    .unwrap();
    assert!(matches!(
        GanPair::new(generator(0), wide),
        Err(Error::Config(_))
    ));
}

#[test]
fn zero_weight_generator_emits_its_bias() {
    let pair = GanPair::new(constant_generator([1.5, -0.5]), discriminator(0)).unwrap();
    let s = gan_sample(&pair, 5, &mut rng_from_seed(0)).unwrap();
    assert_eq!(s.shape(), &[5, 2]);
    for row in s.unstack() {
        assert_eq!(row.data(), &[1.5, -0.5]);
    }
}

#[test]
fn sampling_is_deterministic() {
    let pair = GanPair::new(generator(1), discriminator(1)).unwrap();
    let a = gan_sample(&pair, 10, &mut rng_from_seed(3)).unwrap();
    let b = gan_sample(&pair, 10, &mut rng_from_seed(3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn untrained_discriminator_is_near_chance() {
    let data = gaussian_mixture_2d(&MixtureSpec::two_component(), 400, 0).unwrap();
    let mut total = 0.0;
    for seed in 0..5 {
        let pair = GanPair::new(generator(seed), discriminator(seed)).unwrap();
        total += discriminator_accuracy(&pair, &inputs(&data), &mut rng_from_seed(seed)).unwrap();
    }
    assert!((total / 5.0 - 0.5).abs() < 0.2, "{}", total / 5.0);
}

#[test]
fn updates_touch_only_their_own_network() {
    let data = gaussian_mixture_2d(&MixtureSpec::two_component(), 64, 0).unwrap();
    let real = inputs(&data);
    let mut pair = GanPair::new(generator(2), discriminator(2)).unwrap();
    let mut opts = GanOptimizers::new(crate::optim::OptimizerKind::GradientDescent, 0.1).unwrap();
    let mut rng = rng_from_seed(5);
    for _ in 0..5 {
        // Discriminator-only step: a frozen generator keeps its checksums.
        let mut frozen = pair.clone();
        frozen.generator.freeze(&[0, 2]).unwrap();
        let g_before = frozen.generator.layer_checksums();
        let d_before = frozen.discriminator.layer_checksums();
        gan_train_step(
            &mut frozen,
            &real[..16],
            &mut rng.clone(),
            &mut opts.clone(),
        )
        .unwrap();
        assert_eq!(frozen.generator.layer_checksums(), g_before);
        assert_ne!(frozen.discriminator.layer_checksums(), d_before);

        // Generator-only step: a frozen discriminator keeps its checksums.
        let mut frozen = pair.clone();
        frozen.discriminator.freeze(&[0, 2]).unwrap();
        let d_before = frozen.discriminator.layer_checksums();
        let g_before = frozen.generator.layer_checksums();
        gan_train_step(
            &mut frozen,
            &real[..16],
            &mut rng.clone(),
            &mut opts.clone(),
        )
        .unwrap();
        assert_eq!(frozen.discriminator.layer_checksums(), d_before);
        assert_ne!(frozen.generator.layer_checksums(), g_before);

        gan_train_step(&mut pair, &real[..16], &mut rng, &mut opts).unwrap();
    }
}

#[test]
fn discriminator_separates_a_far_constant_generator() {
    let data = gaussian_mixture_2d(&MixtureSpec::two_component(), 256, 1).unwrap();
    let mut generator = constant_generator([-3.0, -3.0]);
    generator.freeze(&[0]).unwrap();
    let mut pair = GanPair::new(generator, discriminator(3)).unwrap();
    let config = GanTrainConfig {
        batch_size: 16,
        ..GanTrainConfig::new(200)
    };
    let history = train_gan(&mut pair, &data, &config).unwrap();
    let acc = discriminator_accuracy(&pair, &inputs(&data), &mut rng_from_seed(0)).unwrap();
    assert!(acc >= 0.95, "{acc}");
    assert_eq!(history.steps.len(), 200);
}

#[test]
fn discriminator_is_undecided_when_distributions_coincide() {
    // The generator is the identity on standard-normal noise, and so is the data.
    let mut rng = rng_from_seed(4);
    let examples = (0..512)
        .map(|_| Example {
            input: Tensor::standard_normal([2], &mut rng),
            target: Tensor::vector(&[1.0]),
        })
        .collect();
    let data = Dataset::new(Task::Binary, examples, "normal").unwrap();
    let id = Dense::new(Tensor::identity(2), Tensor::zeros([2])).unwrap();
    let mut g =
        Network::from_layers("id", Task::Sequence, vec![2], vec![Layer::Dense(id)]).unwrap();
    g.freeze(&[0]).unwrap();
    let mut pair = GanPair::new(g, discriminator(5)).unwrap();
    let config = GanTrainConfig {
        batch_size: 64,
        learning_rate: 0.02,
        ..GanTrainConfig::new(300)
    };
    train_gan(&mut pair, &data, &config).unwrap();
    for x in [-1.0, 0.0, 1.0] {
        for y in [-1.0, 0.0, 1.0] {
            let p = pair
                .discriminator
                .predict(&Tensor::vector(&[x, y]))
                .unwrap()
                .data()[0];
            assert!((p - 0.5).abs() < 0.1, "D({x},{y}) = {p}");
        }
    }
}

#[test]
fn generator_gradient_through_the_discriminator() {
    for seed in 0..10 {
        let pair = GanPair::new(generator(seed), discriminator(seed + 100)).unwrap();
        let z = Tensor::standard_normal([2], &mut rng_from_seed(seed));
        let e = gan_gradient_error(&pair, &z, 1e-6).unwrap();
        assert!(e < 1e-5, "seed {seed}: {e}");
    }
}

fn encoder(variational: bool, seed: u64) -> Network {
    let latent = if variational { 4 } else { 2 };
    let specs = [
        LayerSpec::Dense { units: 6 },
        LayerSpec::Tanh,
        LayerSpec::Dense { units: latent },
    ];
    Network::new("encoder", Task::Sequence, vec![4], &specs, seed).unwrap()
}

fn decoder(seed: u64) -> Network {
    let specs = [
        LayerSpec::Dense { units: 6 },
        LayerSpec::Tanh,
        LayerSpec::Dense { units: 4 },
    ];
    Network::new("decoder", Task::Sequence, vec![2], &specs, seed).unwrap()
}

#[test]
fn autoencoder_pair_validation() {
    assert!(AutoencoderPair::new(encoder(false, 0), decoder(0), false, 0.0).is_ok());
    assert!(AutoencoderPair::new(encoder(true, 0), decoder(0), true, 1.0).is_ok());
    assert!(matches!(
        AutoencoderPair::new(encoder(true, 0), decoder(0), false, 1.0),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        AutoencoderPair::new(encoder(false, 0), decoder(0), false, -1.0),
        Err(Error::Config(_))
    ));
    let id = |n| {
        let d = Dense::new(Tensor::identity(n), Tensor::zeros([n])).unwrap();
        Network::from_layers("id", Task::Sequence, vec![n], vec![Layer::Dense(d)]).unwrap()
    };
    assert!(matches!(
        AutoencoderPair::new(id(3), id(3), false, 0.0),
        Err(Error::Config(_))
    ));
    let pair = AutoencoderPair::diagnostic(id(3), id(3), false, 0.0).unwrap();
    let out = autoencode(&pair, &Tensor::vector(&[1.0, -2.0, 0.5]), None).unwrap();
    assert_eq!(out.reconstruction_loss, 0.0);
}

#[test]
fn divergence_is_zero_only_at_the_reference() {
    assert_eq!(latent_divergence(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    let mut rng = rng_from_seed(6);
    for _ in 0..100 {
        let m = Tensor::standard_normal([3], &mut rng);
        let s = Tensor::standard_normal([3], &mut rng);
        assert!(latent_divergence(m.data(), s.data()) > 0.0);
    }
}

/// Plain encoder holding only the mean rows of a variational encoder's last
/// dense layer.
fn mean_half(var_encoder: &Network) -> Network {
    let mut layers = var_encoder.layers().to_vec();
    let Some(Layer::Dense(d)) = layers.last_mut() else {
        unreachable!()
    };
    let l = d.units() / 2;
    let cols = d.inputs();
    let w = Tensor::new([l, cols], d.weights.data()[..l * cols].to_vec()).unwrap();
    let b = Tensor::new([l], d.bias.data()[..l].to_vec()).unwrap();
    *d = Dense::new(w, b).unwrap();
    Network::from_layers(
        "plain",
        Task::Sequence,
        var_encoder.input_shape().to_vec(),
        layers,
    )
    .unwrap()
}

#[test]
fn zero_beta_without_noise_is_the_plain_autoencoder() {
    let var = AutoencoderPair::new(encoder(true, 7), decoder(8), true, 0.0).unwrap();
    let plain =
        AutoencoderPair::new(mean_half(&var.encoder), var.decoder.clone(), false, 0.0).unwrap();
    let x = Tensor::vector(&[0.3, -1.2, 0.8, 0.1]);
    let mut rng = rng_from_seed(0);
    let (a, enc_a, dec_a) =
        autoencoder_gradients(&var, &x, None, Mode::Training, &mut rng).unwrap();
    let (b, enc_b, dec_b) =
        autoencoder_gradients(&plain, &x, None, Mode::Training, &mut rng).unwrap();
    assert_eq!(a.reconstruction, b.reconstruction);
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    assert_eq!(dec_a, dec_b);
    assert_eq!(enc_a[0], enc_b[0]);
    let (wa, wb) = (&enc_a[2][0], &enc_b[2][0]);
    assert_eq!(&wa.data()[..wb.len()], wb.data());
    assert!(wa.data()[wb.len()..].iter().all(|&v| v == 0.0));
}

#[test]
fn variational_gradients_match_finite_differences() {
    for seed in 0..10 {
        let pair =
            AutoencoderPair::new(encoder(true, seed), decoder(seed + 50), true, 0.7).unwrap();
        let mut rng = rng_from_seed(seed);
        let x = Tensor::standard_normal([4], &mut rng);
        let noise = Tensor::standard_normal([2], &mut rng);
        let e = autoencoder_gradient_error(&pair, &x, Some(&noise), 1e-6).unwrap();
        assert!(e < 1e-5, "seed {seed}: {e}");
        let plain =
            AutoencoderPair::new(encoder(false, seed), decoder(seed + 50), false, 0.0).unwrap();
        let e = autoencoder_gradient_error(&plain, &x, None, 1e-6).unwrap();
        assert!(e < 1e-5, "plain seed {seed}: {e}");
    }
}

fn blob_data(count: usize, seed: u64) -> Dataset {
    // Points on a 2-D plane embedded in 4-D.
    let mut rng = rng_from_seed(seed);
    let examples = (0..count)
        .map(|_| {
            let u = Tensor::standard_normal([2], &mut rng);
            let (a, b) = (u.data()[0], u.data()[1]);
            Example {
                input: Tensor::vector(&[a, b, 0.5 * (a + b), 0.5 * (a - b)]),
                target: Tensor::vector(&[0.0]),
            }
        })
        .collect();
    Dataset::new(Task::Sequence, examples, "plane").unwrap()
}

#[test]
fn vae_training_reduces_loss_and_is_reproducible() {
    let data = blob_data(128, 9);
    let run = || {
        let mut pair = AutoencoderPair::new(encoder(true, 10), decoder(11), true, 0.1).unwrap();
        let h =
            train_autoencoder(&mut pair, &data, &data, &AutoencoderTrainConfig::new(20)).unwrap();
        (pair, h)
    };
    let (p1, h1) = run();
    let (p2, h2) = run();
    assert_eq!(p1, p2);
    assert_eq!(h1.to_csv(), h2.to_csv());
    assert!(h1.records[19].val_loss < h1.records[0].val_loss);

    let a = vae_generate(&p1, 4, &mut rng_from_seed(1)).unwrap();
    assert_eq!(a, vae_generate(&p1, 4, &mut rng_from_seed(1)).unwrap());
    assert_eq!(a.shape(), &[4, 4]);

    // Decoding a training example's mean gives its noise-free reconstruction.
    let x = &data.examples[0].input;
    let out = autoencode(&p1, x, None).unwrap();
    let mean = out.mean.clone().unwrap();
    assert_eq!(p1.decoder.predict(&mean).unwrap(), out.reconstruction);

    // Interpolated latents decode between the endpoints.
    let y = &data.examples[1].input;
    let m2 = autoencode(&p1, y, None).unwrap().mean.unwrap();
    let (ra, rb) = (
        p1.decoder.predict(&mean).unwrap(),
        p1.decoder.predict(&m2).unwrap(),
    );
    let dist = |u: &Tensor, v: &Tensor| u.sub(v).unwrap().sum_squares().sqrt();
    let mid_latent = mean.add(&m2).unwrap().scale(0.5);
    let mid = p1.decoder.predict(&mid_latent).unwrap();
    let span = dist(&ra, &rb);
    assert!(dist(&mid, &ra) < span && dist(&mid, &rb) < span);
}

#[test]
fn gan_training_is_reproducible() {
    let data = gaussian_mixture_2d(&MixtureSpec::two_component(), 128, 2).unwrap();
    let config = GanTrainConfig {
        batch_size: 16,
        ..GanTrainConfig::new(30)
    };
    let run = || {
        let mut pair = GanPair::new(generator(12), discriminator(13)).unwrap();
        let h = train_gan(&mut pair, &data, &config).unwrap();
        (pair, h)
    };
    let (p1, h1) = run();
    let (p2, h2) = run();
    assert_eq!(p1, p2);
    assert_eq!(h1.to_csv(), h2.to_csv());
}

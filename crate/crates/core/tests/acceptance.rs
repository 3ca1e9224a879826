//! Acceptance suite. Runs every criterion in order (sequentially, so the
//! wall-clock budgets are measured without interference) and prints one
//! PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, ensure, Context, Result};
use rand::Rng;
use serde_json::{json, Value};

use minidl::data::{split, two_blobs, Dataset, Example, SplitSpec, Standardizer, Task};
use minidl::generative::{autoencode, autoencoder_gradients, latent_divergence, AutoencoderPair};
use minidl::layers::{softmax, Layer, LayerCache, LayerSpec, Mode};
use minidl::network::presets::preset;
use minidl::network::{infer_shapes, train, EarlyStopping, Network, StopReason, TrainConfig};
use minidl::optim::{loss, LossKind, OptimizerKind};
use minidl::recurrent::{
    bptt, gradient_flow_profile, sequence_example_gradients, unroll, Cell, CellKind, CellSpec,
    HiddenActivation, OutputHead, RnnCell, SequenceModel, Supervision,
};
use minidl::rng::{rng_from_seed, SeededRng};
use minidl::run::{load_config, run_command, Command, RunOptions, RunReport};
use minidl::tensor::Tensor;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-5;
const SEEDS: u64 = 100;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, Default)]
struct FdStats {
    checked: usize,
    worst: f64,
    /// Entries at or above the tolerance, and their largest `|a − n|`.
    exceeded: usize,
    exceeded_abs: f64,
}

impl FdStats {
    fn merge(&mut self, o: FdStats) {
        self.checked += o.checked;
        self.worst = self.worst.max(o.worst);
        self.exceeded += o.exceeded;
        self.exceeded_abs = self.exceeded_abs.max(o.exceeded_abs);
    }
}

/// Compares `analytic` with the central difference of `f` around `x`. `f`
/// returns the objective and the discrete pattern of kink sides it passed
/// through; an entry whose two probes see different patterns straddles a
/// nondifferentiable point and is skipped.
fn fd_compare(
    x: &Tensor,
    analytic: &Tensor,
    mut f: impl FnMut(&Tensor) -> (f64, Vec<u64>),
) -> FdStats {
    assert_eq!(x.shape(), analytic.shape(), "gradient shape");
    let mut p = x.clone();
    let mut stats = FdStats::default();
    for i in 0..x.len() {
        let v = x.data()[i];
        p.data_mut()[i] = v + EPS;
        let (hi, k_hi) = f(&p);
        p.data_mut()[i] = v - EPS;
        let (lo, k_lo) = f(&p);
        p.data_mut()[i] = v;
        assert!(hi.is_finite() && lo.is_finite(), "non-finite probe");
        if k_hi != k_lo {
            continue;
        }
        let (a, n) = (analytic.data()[i], (hi - lo) / (2.0 * EPS));
        let e = rel_err(a, n);
        stats.checked += 1;
        stats.worst = stats.worst.max(e);
        if e.is_nan() || e >= TOL {
            stats.exceeded += 1;
            stats.exceeded_abs = stats.exceeded_abs.max((a - n).abs());
        }
    }
    stats
}

fn kinks(caches: &[LayerCache]) -> Vec<u64> {
    let mut sig = Vec::new();
    for c in caches {
        c.kink_signature(&mut sig);
    }
    sig
}

/// `Σ r ⊙ (y − y₀)`.
fn centred(y: &Tensor, y0: &Tensor, r: &Tensor) -> f64 {
    y.data()
        .iter()
        .zip(y0.data())
        .zip(r.data())
        .map(|((a, b), w)| (a - b) * w)
        .sum()
}

fn randomize_biases(layer: &mut Layer, rng: &mut SeededRng) {
    let flags = layer.weight_flags();
    for (p, is_weight) in layer.params_mut().into_iter().zip(flags) {
        if !is_weight {
            *p = Tensor::uniform(p.shape().to_vec(), 0.5, rng);
        }
    }
}

fn random_layer(kind: &str, seed: u64) -> (Layer, Tensor) {
    let mut rng = rng_from_seed(seed.wrapping_mul(7919) + 11);
    let c = rng.random_range(1..=3);
    let h = rng.random_range(4..=7);
    let w = rng.random_range(4..=7);
    let (spec, x) = match kind {
        "dense" => {
            let n = rng.random_range(1..=8);
            (
                LayerSpec::Dense {
                    units: rng.random_range(1..=6),
                },
                Tensor::standard_normal([n], &mut rng),
            )
        }
        _ => {
            let spec = match kind {
                "conv2d" => LayerSpec::Conv2d {
                    filters: rng.random_range(1..=4),
                    kernel: rng.random_range(1..=3),
                    stride: rng.random_range(1..=2),
                    padding: rng.random_range(0..=1),
                },
                "separable_conv2d" => LayerSpec::SeparableConv2d {
                    filters: rng.random_range(1..=4),
                    kernel: rng.random_range(1..=3),
                    stride: rng.random_range(1..=2),
                    padding: rng.random_range(0..=1),
                },
                "max_pool" => LayerSpec::MaxPool {
                    size: rng.random_range(1..=3),
                    stride: rng.random_range(1..=3),
                },
                "avg_pool" => LayerSpec::AvgPool {
                    size: rng.random_range(1..=3),
                    stride: rng.random_range(1..=3),
                },
                "upsample" => LayerSpec::Upsample {
                    factor: rng.random_range(1..=3),
                },
                "softmax" => LayerSpec::Softmax,
                "flatten" => LayerSpec::Flatten,
                "reshape" => LayerSpec::Reshape {
                    shape: vec![w, c * h],
                },
                "dropout" => LayerSpec::Dropout {
                    rate: rng.random_range(0.0..0.8),
                },
                "relu" => LayerSpec::Relu,
                "sigmoid" => LayerSpec::Sigmoid,
                "tanh" => LayerSpec::Tanh,
                "linear" => LayerSpec::Linear,
                "step" => LayerSpec::Step { threshold: 0.1 },
                other => panic!("unknown kind {other}"),
            };
            (spec, Tensor::standard_normal([c, h, w], &mut rng))
        }
    };
    let mut layer = spec.build(x.shape(), &mut rng).expect("build");
    randomize_biases(&mut layer, &mut rng);
    (layer, x)
}

/// One layer against the probe objective `Σ r ⊙ (y − y₀)`; dropout masks are
/// replayed by reseeding every evaluation.
fn layer_fd(layer: &Layer, x: &Tensor, seed: u64) -> FdStats {
    let mask = seed + 1000;
    let fwd = |l: &Layer, xi: &Tensor| {
        l.forward(xi, Mode::Training, &mut rng_from_seed(mask))
            .expect("forward")
    };
    let (y0, cache) = fwd(layer, x);
    let r = Tensor::standard_normal(y0.shape().to_vec(), &mut rng_from_seed(seed + 2000));
    let (gx, gp) = layer.backward(cache, &r).expect("backward");
    let objective = |l: &Layer, xi: &Tensor| {
        let (y, c) = fwd(l, xi);
        (centred(&y, &y0, &r), kinks(&[c]))
    };
    let mut stats = fd_compare(x, &gx, |xi| objective(layer, xi));
    for (pi, g) in gp.iter().enumerate() {
        let base = layer.params()[pi].clone();
        stats.merge(fd_compare(&base, g, |p| {
            let mut l = layer.clone();
            *l.params_mut()[pi] = p.clone();
            objective(&l, x)
        }));
    }
    stats
}

struct StackCase {
    net: Network,
    x: Tensor,
    target: Tensor,
    kind: LossKind,
    reg: f64,
}

fn one_hot(k: usize, n: usize) -> Tensor {
    let mut t = Tensor::zeros([n]);
    t.data_mut()[k] = 1.0;
    t
}

fn stack_case(name: &str, seed: u64) -> StackCase {
    let mut rng = rng_from_seed(seed * 31 + 5);
    let (task, input, specs, target, kind, reg) = match name {
        "mlp+l2" => {
            let n = rng.random_range(2..=6);
            let specs = vec![
                LayerSpec::Dense {
                    units: rng.random_range(2..=6),
                },
                LayerSpec::Tanh,
                LayerSpec::Dense {
                    units: rng.random_range(2..=6),
                },
                LayerSpec::Sigmoid,
                LayerSpec::Dense { units: 1 },
                LayerSpec::Sigmoid,
            ];
            let t = Tensor::vector(&[f64::from(rng.random_range(0..2u8))]);
            (
                Task::Binary,
                vec![n],
                specs,
                t,
                LossKind::BinaryCrossEntropy,
                0.01,
            )
        }
        "conv+pool+dense+softmax" => {
            let c = rng.random_range(1..=2);
            let classes = rng.random_range(2..=4);
            let specs = vec![
                LayerSpec::Conv2d {
                    filters: rng.random_range(1..=3),
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { units: classes },
                LayerSpec::Softmax,
            ];
            let t = one_hot(rng.random_range(0..classes), classes);
            (
                Task::Multiclass,
                vec![c, 6, 6],
                specs,
                t,
                LossKind::CategoricalCrossEntropy,
                0.0,
            )
        }
        "segmenter" => {
            let classes = rng.random_range(2..=3);
            let specs = vec![
                LayerSpec::Conv2d {
                    filters: 2,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Tanh,
                LayerSpec::AvgPool { size: 2, stride: 2 },
                LayerSpec::Upsample { factor: 2 },
                LayerSpec::Conv2d {
                    filters: classes,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                },
                LayerSpec::Softmax,
            ];
            let mut t = Tensor::zeros([classes, 4, 4]);
            for p in 0..16 {
                t.data_mut()[rng.random_range(0..classes) * 16 + p] = 1.0;
            }
            (
                Task::PerPixel,
                vec![1, 4, 4],
                specs,
                t,
                LossKind::CategoricalCrossEntropy,
                0.0,
            )
        }
        "separable+dropout+mae" => {
            let outputs = rng.random_range(1..=3);
            let specs = vec![
                LayerSpec::SeparableConv2d {
                    filters: 2,
                    kernel: 2,
                    stride: 1,
                    padding: 0,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dropout { rate: 0.3 },
                LayerSpec::Dense { units: outputs },
                LayerSpec::Linear,
            ];
            let t = Tensor::standard_normal([outputs], &mut rng);
            (
                Task::Sequence,
                vec![2, 4, 4],
                specs,
                t,
                LossKind::MeanAbsoluteError,
                0.0,
            )
        }
        "dense+mse" => {
            let n = rng.random_range(1..=5);
            let outputs = rng.random_range(1..=4);
            let specs = vec![
                LayerSpec::Dense { units: 5 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: outputs },
            ];
            let t = Tensor::standard_normal([outputs], &mut rng);
            (
                Task::Sequence,
                vec![n],
                specs,
                t,
                LossKind::MeanSquaredError,
                0.0,
            )
        }
        other => panic!("unknown stack {other}"),
    };
    let mut net = Network::new(name, task, input.clone(), &specs, seed).expect("network");
    for i in 0..specs.len() {
        randomize_biases(net.layer_mut(i).expect("layer"), &mut rng);
    }
    StackCase {
        net,
        x: Tensor::standard_normal(input, &mut rng),
        target,
        kind,
        reg,
    }
}

/// Loss plus `λ Σ‖w‖²` over dense/conv weights, computed here rather than by
/// the library.
fn stack_objective(case: &StackCase, net: &Network, x: &Tensor, seed: u64) -> (f64, Vec<u64>) {
    let (y, caches) = net
        .forward(x, Mode::Training, &mut rng_from_seed(seed))
        .expect("forward");
    let mut sig = kinks(&caches);
    if case.kind == LossKind::MeanAbsoluteError {
        sig.extend(
            y.data()
                .iter()
                .zip(case.target.data())
                .map(|(p, t)| u64::from(p > t)),
        );
    }
    let mut penalty = 0.0;
    for l in net.layers() {
        for (p, w) in l.params().into_iter().zip(l.weight_flags()) {
            if w {
                penalty += p.data().iter().map(|v| v * v).sum::<f64>();
            }
        }
    }
    let value = loss(case.kind, &y, &case.target).expect("loss").0 + case.reg * penalty;
    (value, sig)
}

fn stack_fd(case: &StackCase, seed: u64) -> FdStats {
    let (y, caches) = case
        .net
        .forward(&case.x, Mode::Training, &mut rng_from_seed(seed))
        .expect("forward");
    let (_, dl) = loss(case.kind, &y, &case.target).expect("loss");
    let grads = case.net.backward(caches, &dl).expect("backward");
    let mut params = grads.params;
    case.net.add_l2(&mut params, case.reg).expect("l2");

    let mut stats = fd_compare(&case.x, &grads.input, |xi| {
        stack_objective(case, &case.net, xi, seed)
    });
    for (li, layer) in case.net.layers().iter().enumerate() {
        for (pi, base) in layer.params().into_iter().enumerate() {
            stats.merge(fd_compare(base, &params[li][pi], |p| {
                let mut n = case.net.clone();
                *n.layer_mut(li).expect("layer").params_mut()[pi] = p.clone();
                stack_objective(case, &n, &case.x, seed)
            }));
        }
    }
    stats
}

fn random_cell(kind: CellKind, seed: u64) -> Cell {
    let mut rng = rng_from_seed(seed * 13 + 3);
    let spec = CellSpec {
        kind,
        inputs: rng.random_range(1..=3),
        hidden: rng.random_range(1..=5),
        outputs: rng.random_range(1..=3),
        activation: HiddenActivation::Tanh,
    };
    let mut cell = spec.build(&mut rng).expect("cell");
    for p in cell.params_mut() {
        // Nonzero biases and weights large enough to bend the tanh.
        *p = Tensor::uniform(p.shape().to_vec(), 0.9, &mut rng);
    }
    cell
}

/// BPTT over `T = 5` steps against `Σ_τ r_τ ⊙ (y_τ − y_τ⁰)`, covering every
/// parameter, every input step and the initial state.
fn cell_fd(cell: &Cell, seed: u64) -> FdStats {
    let mut rng = rng_from_seed(seed + 77);
    let xs: Vec<Tensor> = (0..5)
        .map(|_| Tensor::standard_normal([cell.inputs()], &mut rng))
        .collect();
    let h0 = Tensor::standard_normal([cell.hidden()], &mut rng);
    let base = unroll(cell, &xs, &h0).expect("unroll");
    let r: Vec<Tensor> = base
        .outputs
        .iter()
        .map(|y| Tensor::standard_normal(y.shape().to_vec(), &mut rng))
        .collect();
    let g = bptt(cell, base.cache.clone(), &r).expect("bptt");
    let objective = |c: &Cell, xs: &[Tensor], h: &Tensor| {
        let run = unroll(c, xs, h).expect("unroll");
        let v = run
            .outputs
            .iter()
            .zip(&base.outputs)
            .zip(&r)
            .map(|((y, y0), ri)| centred(y, y0, ri))
            .sum();
        (v, Vec::new())
    };
    let mut stats = fd_compare(&h0, &g.h0, |h| objective(cell, &xs, h));
    for (tau, dx) in g.inputs.iter().enumerate() {
        stats.merge(fd_compare(&xs[tau], dx, |x| {
            let mut v = xs.clone();
            v[tau] = x.clone();
            objective(cell, &v, &h0)
        }));
    }
    for (pi, gp) in g.params.iter().enumerate() {
        stats.merge(fd_compare(cell.params()[pi], gp, |p| {
            let mut c = cell.clone();
            *c.params_mut()[pi] = p.clone();
            objective(&c, &xs, &h0)
        }));
    }
    stats
}

/// Per-frame conv features feeding a gated cell with a sigmoid head, final
/// step supervised by cross-entropy.
fn cnn_rnn_fd(seed: u64) -> FdStats {
    let mut rng = rng_from_seed(seed * 17 + 9);
    let specs = [
        LayerSpec::Conv2d {
            filters: 2,
            kernel: 3,
            stride: 1,
            padding: 0,
        },
        LayerSpec::Tanh,
        LayerSpec::Flatten,
    ];
    let features =
        Network::new("frames", Task::Sequence, vec![1, 4, 4], &specs, seed).expect("features");
    let cell = CellSpec {
        kind: if seed.is_multiple_of(2) {
            CellKind::Gated
        } else {
            CellKind::Rnn
        },
        inputs: 8,
        hidden: 3,
        outputs: 1,
        activation: HiddenActivation::Tanh,
    }
    .build(&mut rng)
    .expect("cell");
    let model = SequenceModel::new(Some(features), cell, OutputHead::Sigmoid).expect("model");
    let seq = Tensor::standard_normal([5, 1, 4, 4], &mut rng);
    let target = Tensor::vector(&[f64::from(rng.random_range(0..2u8))]);
    let run = |m: &SequenceModel| {
        sequence_example_gradients(
            m,
            &seq,
            &target,
            Supervision::Final,
            LossKind::BinaryCrossEntropy,
            Mode::Training,
            0,
        )
        .expect("sequence gradients")
    };
    let (_, cell_grads, feat_grads) = run(&model);
    let mut stats = FdStats::default();
    for (pi, g) in cell_grads.iter().enumerate() {
        stats.merge(fd_compare(model.cell.params()[pi], g, |p| {
            let mut m = model.clone();
            *m.cell.params_mut()[pi] = p.clone();
            (run(&m).0, Vec::new())
        }));
    }
    let feat_grads = feat_grads.expect("feature gradients");
    let net = model.features.as_ref().expect("features");
    for (li, layer) in net.layers().iter().enumerate() {
        for (pi, base) in layer.params().into_iter().enumerate() {
            stats.merge(fd_compare(base, &feat_grads[li][pi], |p| {
                let mut m = model.clone();
                let f = m.features.as_mut().expect("features");
                *f.layer_mut(li).expect("layer").params_mut()[pi] = p.clone();
                (run(&m).0, Vec::new())
            }));
        }
    }
    stats
}

fn tanh_net(
    name: &str,
    task: Task,
    inputs: usize,
    hidden: usize,
    outputs: usize,
    sigmoid: bool,
    seed: u64,
) -> Network {
    let mut specs = vec![
        LayerSpec::Dense { units: hidden },
        LayerSpec::Tanh,
        LayerSpec::Dense { units: outputs },
    ];
    if sigmoid {
        specs.push(LayerSpec::Sigmoid);
    }
    let mut net = Network::new(name, task, vec![inputs], &specs, seed).expect("network");
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    for i in 0..specs.len() {
        randomize_biases(net.layer_mut(i).expect("layer"), &mut rng);
    }
    net
}

/// Generator gradient of `−ln D(G(z))` taken through the discriminator, and
/// the discriminator gradient of its real-versus-generated cross-entropy.
fn gan_fd(seed: u64) -> FdStats {
    let mut rng = rng_from_seed(seed * 3 + 1);
    let noise = rng.random_range(1..=3);
    let dim = rng.random_range(1..=3);
    let g = tanh_net("g", Task::Sequence, noise, 4, dim, false, seed);
    let d = tanh_net("d", Task::Binary, dim, 4, 1, true, seed + 500);
    let z = Tensor::standard_normal([noise], &mut rng);
    let real = Tensor::standard_normal([dim], &mut rng);
    let (one, zero) = (Tensor::vector(&[1.0]), Tensor::vector(&[0.0]));
    let mut r0 = rng_from_seed(0);

    let gen_obj = |gn: &Network, z: &Tensor| {
        let x = gn.predict(z).expect("g");
        (
            loss(
                LossKind::BinaryCrossEntropy,
                &d.predict(&x).expect("d"),
                &one,
            )
            .expect("loss")
            .0,
            Vec::new(),
        )
    };
    let (x, g_caches) = g.forward(&z, Mode::Training, &mut r0).expect("g");
    let (p, d_caches) = d.forward(&x, Mode::Training, &mut r0).expect("d");
    let (_, dl) = loss(LossKind::BinaryCrossEntropy, &p, &one).expect("loss");
    let dx = d.backward(d_caches, &dl).expect("d back").input;
    let gg = g.backward(g_caches, &dx).expect("g back");
    let mut stats = fd_compare(&z, &gg.input, |zp| gen_obj(&g, zp));
    for (li, layer) in g.layers().iter().enumerate() {
        for (pi, base) in layer.params().into_iter().enumerate() {
            stats.merge(fd_compare(base, &gg.params[li][pi], |pp| {
                let mut gn = g.clone();
                *gn.layer_mut(li).expect("layer").params_mut()[pi] = pp.clone();
                gen_obj(&gn, &z)
            }));
        }
    }

    let disc_obj = |dn: &Network| {
        let a = loss(
            LossKind::BinaryCrossEntropy,
            &dn.predict(&real).expect("d"),
            &one,
        )
        .expect("loss")
        .0;
        let b = loss(
            LossKind::BinaryCrossEntropy,
            &dn.predict(&x).expect("d"),
            &zero,
        )
        .expect("loss")
        .0;
        (a + b, Vec::new())
    };
    let mut d_grads = d.zero_grads();
    for (input, t) in [(&real, &one), (&x, &zero)] {
        let (p, caches) = d.forward(input, Mode::Training, &mut r0).expect("d");
        let (_, dl) = loss(LossKind::BinaryCrossEntropy, &p, t).expect("loss");
        minidl::network::accumulate(
            &mut d_grads,
            &d.backward(caches, &dl).expect("d back").params,
        )
        .expect("acc");
    }
    for (li, layer) in d.layers().iter().enumerate() {
        for (pi, base) in layer.params().into_iter().enumerate() {
            stats.merge(fd_compare(base, &d_grads[li][pi], |pp| {
                let mut dn = d.clone();
                *dn.layer_mut(li).expect("layer").params_mut()[pi] = pp.clone();
                disc_obj(&dn)
            }));
        }
    }
    stats
}

/// Reconstruction MSE plus `β·½Σ(μ² + e^{2s} − 1 − 2s)` with the
/// reparameterized code `μ + e^s ⊙ ε`, written out independently of the
/// library's pass.
fn vae_objective(pair: &AutoencoderPair, x: &Tensor, noise: Option<&Tensor>) -> f64 {
    let h = pair.encoder.predict(x).expect("encode");
    let l = pair.latent;
    let (code, kl) = if pair.variational {
        let (m, s) = h.data().split_at(l);
        let e = noise.map_or(vec![0.0; l], |n| n.data().to_vec());
        let code: Vec<f64> = (0..l).map(|k| m[k] + s[k].exp() * e[k]).collect();
        let kl: f64 = (0..l)
            .map(|k| m[k] * m[k] + (2.0 * s[k]).exp() - 1.0 - 2.0 * s[k])
            .sum::<f64>()
            * 0.5;
        (Tensor::vector(&code), kl)
    } else {
        (h, 0.0)
    };
    let y = pair.decoder.predict(&code).expect("decode");
    let mse = y
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    mse + if pair.variational {
        pair.beta * kl
    } else {
        0.0
    }
}

fn vae_pair(seed: u64, variational: bool, beta: f64) -> (AutoencoderPair, Tensor, Option<Tensor>) {
    let mut rng = rng_from_seed(seed * 5 + 2);
    let d = rng.random_range(3..=6);
    let l = rng.random_range(1..d.min(3) + 1).min(d - 1);
    let code = if variational { 2 * l } else { l };
    let enc = tanh_net("enc", Task::Sequence, d, 5, code, false, seed);
    let dec = tanh_net("dec", Task::Sequence, l, 5, d, false, seed + 900);
    let pair = AutoencoderPair::new(enc, dec, variational, beta).expect("pair");
    let x = Tensor::standard_normal([d], &mut rng);
    let noise = variational.then(|| Tensor::standard_normal([l], &mut rng));
    (pair, x, noise)
}

fn vae_fd(seed: u64, variational: bool) -> Result<FdStats> {
    let beta = if variational {
        0.25 + (seed % 8) as f64 * 0.25
    } else {
        0.0
    };
    let (pair, x, noise) = vae_pair(seed, variational, beta);
    let (out, enc, dec) = autoencoder_gradients(
        &pair,
        &x,
        noise.as_ref(),
        Mode::Training,
        &mut rng_from_seed(0),
    )?;
    let expected = vae_objective(&pair, &x, noise.as_ref());
    ensure!(
        rel_err(out.loss, expected) < 1e-12,
        "seed {seed}: library loss {} vs independent {expected}",
        out.loss
    );
    let mut stats = FdStats::default();
    for (which, grads) in [(0, &enc), (1, &dec)] {
        let net = if which == 0 {
            &pair.encoder
        } else {
            &pair.decoder
        };
        for (li, layer) in net.layers().iter().enumerate() {
            for (pi, base) in layer.params().into_iter().enumerate() {
                stats.merge(fd_compare(base, &grads[li][pi], |pp| {
                    let mut q = pair.clone();
                    let n = if which == 0 {
                        &mut q.encoder
                    } else {
                        &mut q.decoder
                    };
                    *n.layer_mut(li).expect("layer").params_mut()[pi] = pp.clone();
                    (vae_objective(&q, &x, noise.as_ref()), Vec::new())
                }));
            }
        }
    }
    Ok(stats)
}

// ---------------------------------------------------------------------------
// Criteria

const LAYER_KINDS: &[&str] = &[
    "dense",
    "conv2d",
    "separable_conv2d",
    "max_pool",
    "avg_pool",
    "upsample",
    "softmax",
    "flatten",
    "reshape",
    "dropout",
    "relu",
    "sigmoid",
    "tanh",
    "linear",
    "step",
];

fn criterion_gradients() -> Result<String> {
    let start = Instant::now();
    let mut groups: Vec<(String, FdStats)> = Vec::new();
    let mut run = |name: String, f: &mut dyn FnMut(u64) -> Result<FdStats>| -> Result<()> {
        let mut stats = FdStats::default();
        for seed in 0..SEEDS {
            stats.merge(f(seed)?);
        }
        groups.push((name, stats));
        Ok(())
    };
    for kind in LAYER_KINDS {
        run(format!("layer {kind}"), &mut |s| {
            let (l, x) = random_layer(kind, s);
            Ok(layer_fd(&l, &x, s))
        })?;
    }
    for stack in [
        "mlp+l2",
        "conv+pool+dense+softmax",
        "segmenter",
        "separable+dropout+mae",
        "dense+mse",
    ] {
        run(format!("stack {stack}"), &mut |s| {
            Ok(stack_fd(&stack_case(stack, s), s))
        })?;
    }
    run("rnn cell T=5".into(), &mut |s| {
        Ok(cell_fd(&random_cell(CellKind::Rnn, s), s))
    })?;
    run("gated cell T=5".into(), &mut |s| {
        Ok(cell_fd(&random_cell(CellKind::Gated, s), s))
    })?;
    run("conv features + cell T=5".into(), &mut |s| {
        Ok(cnn_rnn_fd(s))
    })?;
    run("gan".into(), &mut |s| Ok(gan_fd(s)))?;
    run("vae".into(), &mut |s| vae_fd(s, true))?;
    run("autoencoder".into(), &mut |s| vae_fd(s, false))?;
    let elapsed = start.elapsed();

    let checked: usize = groups.iter().map(|(_, g)| g.checked).sum();
    let (worst_name, worst) = groups
        .iter()
        .max_by(|a, b| a.1.worst.total_cmp(&b.1.worst))
        .map(|(n, g)| (n.clone(), g.worst))
        .expect("groups");
    let failing: Vec<String> = groups
        .iter()
        .filter(|(_, g)| g.exceeded > 0)
        .map(|(n, g)| {
            format!(
                "{n} worst {:.2e}, {}/{} entries over (max |a−n| {:.1e})",
                g.worst, g.exceeded, g.checked, g.exceeded_abs
            )
        })
        .collect();
    ensure!(
        failing.is_empty(),
        "relative error ≥ {TOL:e} in {}",
        failing.join("; ")
    );
    ensure!(
        elapsed < Duration::from_secs(60),
        "took {elapsed:?}, budget 60 s"
    );
    Ok(format!(
        "{} groups × {SEEDS} seeds, {checked} entries, worst {worst:.2e} ({worst_name}), {:.1} s",
        groups.len(),
        elapsed.as_secs_f64()
    ))
}

/// Direct sliding-window convolution of one channel, no padding, stride 1.
fn direct_conv(x: &[f64], n: usize, k: &[f64], m: usize, bias: f64) -> Vec<f64> {
    let out = n - m + 1;
    let mut y = vec![bias; out * out];
    for i in 0..out {
        for j in 0..out {
            for a in 0..m {
                for b in 0..m {
                    y[i * out + j] += x[(i + a) * n + j + b] * k[a * m + b];
                }
            }
        }
    }
    y
}

fn criterion_arithmetic() -> Result<String> {
    let mut rng = rng_from_seed(4);
    let conv = LayerSpec::Conv2d {
        filters: 1,
        kernel: 3,
        stride: 1,
        padding: 0,
    };
    ensure!(
        conv.output_shape(&[1, 5, 5])? == [1, 3, 3],
        "5×5 ∗ 3×3 is not 3×3"
    );
    let layer = conv.build(&[1, 5, 5], &mut rng)?;
    let x = Tensor::standard_normal([1, 5, 5], &mut rng);
    let (y, _) = layer.forward(&x, Mode::Inference, &mut rng)?;
    ensure!(y.shape() == [1, 3, 3], "forward produced {:?}", y.shape());
    let Layer::Conv2d(c) = &layer else {
        unreachable!()
    };
    let expected = direct_conv(x.data(), 5, c.filters.data(), 3, c.bias.data()[0]);
    for (a, b) in y.data().iter().zip(&expected) {
        ensure!((a - b).abs() < 1e-12, "conv value {a} vs direct {b}");
    }

    ensure!(
        conv.param_count(&[1, 5, 5]) == 9 + 1,
        "conv neuron parameters"
    );
    ensure!(layer.param_count() == 10, "built conv parameters");
    let dense = LayerSpec::Dense { units: 1 };
    ensure!(
        dense.param_count(&[25]) == 25 + 1,
        "dense neuron parameters"
    );
    ensure!(
        dense.build(&[25], &mut rng)?.param_count() == 26,
        "built dense parameters"
    );

    let flat = LayerSpec::Flatten.output_shape(&[3, 227, 227])?;
    ensure!(
        flat == [227 * 227 * 3] && flat[0] == 154_587,
        "flatten gave {flat:?}"
    );
    let rows = infer_shapes(
        &[3, 227, 227],
        &[LayerSpec::Flatten, LayerSpec::Dense { units: 1 }],
    )?;
    ensure!(
        rows[1].params == 154_587 + 1,
        "dense over the flattened image"
    );

    let mut cases = 0usize;
    for h in 1..=16usize {
        for w in [1, h, 16] {
            for k in 1..=5usize {
                for s in 1..=3usize {
                    for p in 0..=2usize {
                        let extent = |n: usize| (n + 2 * p >= k).then(|| (n + 2 * p - k) / s + 1);
                        let spec = LayerSpec::Conv2d {
                            filters: 2,
                            kernel: k,
                            stride: s,
                            padding: p,
                        };
                        let got = spec.output_shape(&[1, h, w]).ok();
                        let want = extent(h).zip(extent(w)).map(|(a, b)| vec![2, a, b]);
                        ensure!(
                            got == want,
                            "conv H{h} W{w} k{k} s{s} p{p}: {got:?} vs {want:?}"
                        );
                        if let Some(shape) = &want {
                            let l = spec.build(&[1, h, w], &mut rng)?;
                            let (y, _) =
                                l.forward(&Tensor::zeros([1, h, w]), Mode::Inference, &mut rng)?;
                            ensure!(
                                y.shape() == shape.as_slice(),
                                "conv forward H{h} k{k} s{s} p{p}"
                            );
                        }
                        if p == 0 {
                            let pool = LayerSpec::MaxPool { size: k, stride: s };
                            let got = pool.output_shape(&[2, h, w]).ok();
                            let want = extent(h).zip(extent(w)).map(|(a, b)| vec![2, a, b]);
                            ensure!(got == want, "pool H{h} W{w} k{k} s{s}: {got:?} vs {want:?}");
                        }
                        cases += 1;
                    }
                }
            }
        }
    }
    Ok(format!(
        "3×3 output, 10 vs 26 parameters, 154587 values, {cases} shape cases"
    ))
}

fn criterion_softmax() -> Result<String> {
    let mut rng = rng_from_seed(3);
    let (mut worst_sum, mut worst_shift) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let n = rng.random_range(1..=20);
        let o: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..=100.0)).collect();
        let c = rng.random_range(-100.0..=100.0);
        let p = softmax(&Tensor::vector(&o));
        let shifted: Vec<f64> = o.iter().map(|v| v + c).collect();
        let q = softmax(&Tensor::vector(&shifted));
        ensure!(
            p.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
            "probability out of range"
        );
        worst_sum = worst_sum.max((p.sum() - 1.0).abs());
        for (a, b) in p.data().iter().zip(q.data()) {
            worst_shift = worst_shift.max((a - b).abs());
        }
    }
    ensure!(worst_sum <= 1e-12, "sum deviates by {worst_sum:e}");
    ensure!(
        worst_shift <= 1e-12,
        "shift changes outputs by {worst_shift:e}"
    );
    Ok(format!(
        "10⁴ vectors: |Σ−1| ≤ {worst_sum:.1e}, shift error ≤ {worst_shift:.1e}"
    ))
}

fn run_config(command: Command, config: &Path, out: &Path) -> Result<(RunReport, Duration)> {
    let start = Instant::now();
    let outcome = run_command(
        command,
        config,
        &RunOptions {
            seed: None,
            out: Some(out.to_path_buf()),
        },
    )
    .with_context(|| format!("{command} {}", config.display()))?;
    let elapsed = start.elapsed();
    Ok((outcome.report.ok_or_else(|| anyhow!("no report"))?, elapsed))
}

fn detail(report: &RunReport, key: &str) -> Result<f64> {
    report.details[key]
        .as_f64()
        .ok_or_else(|| anyhow!("report lacks {key}"))
}

fn criterion_blobs(tmp: &Path) -> Result<String> {
    let (report, elapsed) = run_config(
        Command::Train,
        &configs_dir().join("blobs-mlp.json"),
        &tmp.join("blobs"),
    )?;
    ensure!(
        report.config["model"]["preset"] == "mlp",
        "not the mlp preset"
    );
    ensure!(
        report.data.examples == 500,
        "{} examples",
        report.data.examples
    );
    ensure!(
        report.data.splits == Some([350, 75, 75]),
        "splits {:?}",
        report.data.splits
    );
    let m = report
        .metrics
        .as_ref()
        .ok_or_else(|| anyhow!("no metrics"))?;
    let epochs = report.history.as_ref().map_or(0, |h| h.rows);
    ensure!(epochs <= 200, "{epochs} epochs");
    ensure!(m.coin_baseline == 0.5, "coin baseline {}", m.coin_baseline);
    ensure!(m.accuracy >= 0.95, "test accuracy {:.4}", m.accuracy);
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "test accuracy {:.4} after {epochs} epochs (coin baseline {}), {:.1} s",
        m.accuracy,
        m.coin_baseline,
        elapsed.as_secs_f64()
    ))
}

fn criterion_tools(tmp: &Path) -> Result<String> {
    let (report, elapsed) = run_config(
        Command::Train,
        &configs_dir().join("tools-alexnet.json"),
        &tmp.join("tools"),
    )?;
    ensure!(
        report.config["model"]["preset"] == "alexnet-mini",
        "not alexnet-mini"
    );
    ensure!(
        report.data.examples == 2000,
        "{} examples",
        report.data.examples
    );
    ensure!(
        report.data.task == Task::Multilabel,
        "task {:?}",
        report.data.task
    );
    let m = report
        .metrics
        .as_ref()
        .ok_or_else(|| anyhow!("no metrics"))?;
    let untrained = report
        .baseline
        .as_ref()
        .ok_or_else(|| anyhow!("no untrained metrics"))?;
    ensure!(m.accuracy >= 0.90, "per-label accuracy {:.4}", m.accuracy);
    ensure!(
        untrained.accuracy <= 0.55,
        "untrained accuracy {:.4}",
        untrained.accuracy
    );
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!(
        "per-label accuracy {:.4} vs untrained {:.4}, {:.1} s",
        m.accuracy,
        untrained.accuracy,
        elapsed.as_secs_f64()
    ))
}

fn criterion_segmentation(tmp: &Path) -> Result<String> {
    let (report, elapsed) = run_config(
        Command::Train,
        &configs_dir().join("segmentation.json"),
        &tmp.join("seg"),
    )?;
    ensure!(
        report.config["model"]["preset"] == "segmenter-mini",
        "not segmenter-mini"
    );
    ensure!(
        report.data.task == Task::PerPixel,
        "task {:?}",
        report.data.task
    );
    let m = report
        .metrics
        .as_ref()
        .ok_or_else(|| anyhow!("no metrics"))?;
    ensure!(m.accuracy >= 0.90, "pixel accuracy {:.4}", m.accuracy);
    ensure!(
        m.majority_baseline > 0.0 && m.majority_baseline < 1.0,
        "majority baseline missing"
    );
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!(
        "pixel accuracy {:.4} vs majority-background baseline {:.4}, {:.1} s",
        m.accuracy,
        m.majority_baseline,
        elapsed.as_secs_f64()
    ))
}

fn blob_splits() -> Result<(Dataset, Dataset, Dataset)> {
    let ds = two_blobs(500, 0)?;
    Ok(split(
        &ds,
        &SplitSpec {
            train: 0.7,
            val: 0.15,
            test: 0.15,
            seed: 0,
        },
    )?)
}

fn mlp(seed: u64) -> Result<Network> {
    let specs = preset("mlp", &[2], Task::Binary, &[1])?;
    Ok(Network::new("mlp", Task::Binary, vec![2], &specs, seed)?)
}

fn squared_weights(net: &Network) -> f64 {
    net.layers()
        .iter()
        .map(|l| match l {
            Layer::Dense(d) => d.weights.data().iter().map(|v| v * v).sum(),
            _ => 0.0,
        })
        .sum()
}

fn criterion_regularization() -> Result<String> {
    let (tr, va, _) = blob_splits()?;
    let config = |reg: f64| TrainConfig {
        reg_strength: reg,
        patience: 0,
        optimizer: OptimizerKind::GradientDescent,
        learning_rate: 0.1,
        ..TrainConfig::new(60, LossKind::BinaryCrossEntropy)
    };
    let mut plain = mlp(1)?;
    let mut reg = mlp(1)?;
    ensure!(plain == reg, "same seed must give the same initialization");
    train(&mut plain, &tr, &va, &config(0.0))?;
    train(&mut reg, &tr, &va, &config(0.01))?;
    let (w0, w1) = (squared_weights(&plain), squared_weights(&reg));
    ensure!(w1 < w0, "Σ‖w‖² with λ_r = 0.01 is {w1} vs {w0} without");

    let mut rng = rng_from_seed(12);
    let x = Tensor::uniform([64], 3.0, &mut rng).map(|v| v + 0.5 * v.signum());
    let mut worst = 0.0f64;
    for rate in [0.1, 0.3, 0.5] {
        let layer = LayerSpec::Dropout { rate }.build(&[64], &mut rng)?;
        let mut mean = Tensor::zeros([64]);
        for _ in 0..10_000 {
            mean.add_assign(&layer.forward(&x, Mode::Training, &mut rng)?.0)?;
        }
        let mean = mean.scale(1e-4);
        let dev = mean.sub(&x)?.sum_squares().sqrt() / x.sum_squares().sqrt();
        ensure!(
            dev <= 0.02,
            "dropout rate {rate}: mean deviates by {:.2}%",
            dev * 100.0
        );
        worst = worst.max(dev);
        ensure!(
            layer.forward(&x, Mode::Inference, &mut rng)?.0 == x,
            "inference dropout is not identity"
        );
    }

    let mut net = mlp(2)?;
    let before = net.clone();
    let last = net.layers().len() - 2;
    let frozen: Vec<usize> = (0..last).collect();
    net.freeze(&frozen)?;
    train(&mut net, &tr, &va, &config(0.01))?;
    for (i, (a, b)) in before.layers().iter().zip(net.layers()).enumerate() {
        let same = a.params().iter().zip(b.params()).all(|(p, q)| {
            p.data()
                .iter()
                .zip(q.data())
                .all(|(u, v)| u.to_bits() == v.to_bits())
        });
        if i < last {
            ensure!(same, "frozen layer {i} changed");
        } else if a.param_count() > 0 {
            ensure!(!same, "unfrozen layer {i} did not train");
        }
    }
    Ok(format!(
        "Σ‖w‖² {w1:.3} (λ_r 0.01) < {w0:.3} (λ_r 0); dropout mean within {:.2}%; {last} frozen layers bitwise unchanged",
        worst * 100.0
    ))
}

fn scalar_linear(w: f64) -> Result<Cell> {
    let one = || Tensor::new([1, 1], vec![1.0]);
    Ok(Cell::Rnn(RnnCell::new(
        one()?,
        Tensor::new([1, 1], vec![w])?,
        Tensor::zeros([1]),
        one()?,
        Tensor::zeros([1]),
        HiddenActivation::Linear,
    )?))
}

fn criterion_recurrent(tmp: &Path) -> Result<String> {
    let (report, elapsed) = run_config(
        Command::RnnTrain,
        &configs_dir().join("parity-rnn.json"),
        &tmp.join("parity"),
    )?;
    let cfg = &report.config["recurrent"];
    ensure!(
        cfg["cell"]["kind"] == "rnn" && cfg["cell"]["hidden"] == 16,
        "not an h = 16 rnn"
    );
    ensure!(
        cfg["steps"].as_u64().is_some_and(|s| s <= 2000),
        "more than 2000 steps"
    );
    ensure!(report.config["data"]["length"] == 8, "not 8-step parity");
    let final_acc = detail(&report, "test_final_accuracy")?;
    let step_acc = detail(&report, "test_step_accuracy")?;
    ensure!(final_acc >= 0.99, "sequence accuracy {final_acc:.4}");
    ensure!(step_acc >= 0.99, "per-step accuracy {step_acc:.4}");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");

    let mut worst = 0.0f64;
    for w in [0.5, 1.5] {
        for t in [5usize, 8, 12] {
            let profile = gradient_flow_profile(&scalar_linear(w)?, t, 9)?;
            ensure!(profile.len() == t, "profile length");
            for (i, &v) in profile.iter().enumerate() {
                let tau = i + 1;
                let expected = w.abs().powi((t - tau) as i32);
                worst = worst.max((v - expected).abs());
            }
        }
    }
    ensure!(
        worst <= 1e-9,
        "gradient flow deviates from |w|^(T−τ) by {worst:e}"
    );
    Ok(format!(
        "parity sequence accuracy {final_acc:.4} (per step {step_acc:.4}) in {:.1} s; flow profile error {worst:.1e}",
        elapsed.as_secs_f64()
    ))
}

fn criterion_generative(tmp: &Path) -> Result<String> {
    let (report, elapsed) = run_config(
        Command::GanTrain,
        &configs_dir().join("gan-mixture.json"),
        &tmp.join("gan"),
    )?;
    ensure!(report.config["gan"]["steps"] == 5000, "not 5000 steps");
    let sample: Vec<f64> = serde_json::from_value(report.details["sample_mean"].clone())?;
    let data: Vec<f64> = serde_json::from_value(report.details["data_mean"].clone())?;
    ensure!(sample.len() == 2 && data.len() == 2, "means are not 2-D");
    let gap = sample
        .iter()
        .zip(&data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure!(gap <= 0.2, "sample mean {sample:?} vs data mean {data:?}");
    let acc = detail(&report, "discriminator_accuracy")?;
    ensure!((0.4..=0.6).contains(&acc), "discriminator accuracy {acc}");

    ensure!(
        latent_divergence(&[0.0; 4], &[0.0; 4]) == 0.0,
        "divergence at the reference"
    );
    let (mut pair, x, _) = vae_pair(3, true, 1.0);
    let last = pair.encoder.layers().len() - 1;
    for p in pair.encoder.layer_mut(last).expect("layer").params_mut() {
        p.fill(0.0);
    }
    let out = autoencode(&pair, &x, Some(&Tensor::vector(&vec![0.7; pair.latent])))?;
    ensure!(
        out.divergence == 0.0,
        "divergence {} at mean 0, unit spread",
        out.divergence
    );
    ensure!(
        out.loss == out.reconstruction_loss,
        "loss differs from reconstruction at zero divergence"
    );

    for seed in 0..SEEDS {
        let (var, x, _) = vae_pair(seed, true, 0.0);
        // The plain encoder keeps only the mean half of the last dense layer.
        let mut layers = var.encoder.layers().to_vec();
        let Some(Layer::Dense(d)) = layers.last_mut() else {
            unreachable!()
        };
        let (l, cols) = (d.units() / 2, d.inputs());
        d.weights = Tensor::new([l, cols], d.weights.data()[..l * cols].to_vec())?;
        d.bias = Tensor::new([l], d.bias.data()[..l].to_vec())?;
        let enc = Network::from_layers(
            "plain",
            Task::Sequence,
            var.encoder.input_shape().to_vec(),
            layers,
        )?;
        let plain = AutoencoderPair::new(enc, var.decoder.clone(), false, 0.0)?;
        let mut r = rng_from_seed(seed);
        let (a, enc_a, dec_a) = autoencoder_gradients(&var, &x, None, Mode::Training, &mut r)?;
        let (b, enc_b, dec_b) = autoencoder_gradients(&plain, &x, None, Mode::Training, &mut r)?;
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure!(
            bits(&a.reconstruction) == bits(&b.reconstruction),
            "seed {seed}: reconstruction differs"
        );
        ensure!(
            a.loss.to_bits() == b.loss.to_bits(),
            "seed {seed}: loss differs"
        );
        ensure!(dec_a == dec_b, "seed {seed}: decoder gradients differ");
        ensure!(
            enc_a[..last] == enc_b[..last],
            "seed {seed}: encoder gradients differ"
        );
        let (wa, wb) = (&enc_a[last][0], &enc_b[last][0]);
        ensure!(
            bits(wa)[..wb.len()] == bits(wb)[..],
            "seed {seed}: mean-row gradients differ"
        );
    }
    Ok(format!(
        "GAN mean gap {gap:.3}, discriminator accuracy {acc:.3} ({:.1} s); divergence 0 at reference; β = 0 bitwise plain over {SEEDS} seeds",
        elapsed.as_secs_f64()
    ))
}

fn write_config(dir: &Path, name: &str, v: &Value) -> Result<PathBuf> {
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(v)?)?;
    Ok(path)
}

fn small_configs() -> Vec<(Command, &'static str, Value)> {
    vec![
        (
            Command::Train,
            "train",
            json!({
                "name": "det-train", "seed": 7,
                "data": { "source": "generator", "name": "two_blobs", "count": 200 },
                "model": { "layers": [
                    { "type": "dense", "units": 6 }, { "type": "relu" },
                    { "type": "dropout", "rate": 0.2 },
                    { "type": "dense", "units": 1 }, { "type": "sigmoid" } ] },
                "augment": null,
                "train": { "epochs": 15, "loss": "binary_cross_entropy", "optimizer": "adaptive",
                           "learning_rate": 0.05, "batch_size": 8, "reg_strength": 0.001 }
            }),
        ),
        (
            Command::RnnTrain,
            "rnn",
            json!({
                "name": "det-rnn", "seed": 7,
                "data": { "source": "generator", "name": "parity", "count": 120, "length": 5 },
                "recurrent": { "cell": { "kind": "gated", "inputs": 1, "hidden": 4, "outputs": 1 },
                               "steps": 60, "loss": "binary_cross_entropy", "batch_size": 8, "log_every": 10 }
            }),
        ),
        (
            Command::GanTrain,
            "gan",
            json!({
                "name": "det-gan", "seed": 7,
                "data": { "source": "generator", "name": "gaussian_mixture", "count": 200 },
                "gan": { "noise": 2,
                         "generator": [ { "type": "dense", "units": 8 }, { "type": "tanh" }, { "type": "dense", "units": 2 } ],
                         "discriminator": [ { "type": "dense", "units": 8 }, { "type": "tanh" },
                                            { "type": "dense", "units": 1 }, { "type": "sigmoid" } ],
                         "steps": 100, "batch_size": 16, "samples": 50 }
            }),
        ),
        (
            Command::VaeTrain,
            "vae",
            json!({
                "name": "det-vae", "seed": 7,
                "data": { "source": "generator", "name": "shapes_8x8", "count": 120 },
                "autoencoder": {
                    "encoder": [ { "type": "flatten" }, { "type": "dense", "units": 8 }, { "type": "tanh" },
                                 { "type": "dense", "units": 4 } ],
                    "decoder": [ { "type": "dense", "units": 64 }, { "type": "sigmoid" },
                                 { "type": "reshape", "shape": [1, 8, 8] } ],
                    "variational": true, "beta": 0.5, "epochs": 3, "batch_size": 8, "samples": 4 }
            }),
        ),
    ]
}

fn read(dir: &Path, file: &str) -> Result<Vec<u8>> {
    std::fs::read(dir.join(file)).with_context(|| format!("reading {file} in {}", dir.display()))
}

fn criterion_determinism(tmp: &Path) -> Result<String> {
    let root = tmp.join("determinism");
    std::fs::create_dir_all(&root)?;
    for (command, name, config) in small_configs() {
        let path = write_config(&root, name, &config)?;
        let outs: Vec<PathBuf> = ["a", "b"]
            .iter()
            .map(|s| root.join(format!("{name}-{s}")))
            .collect();
        for out in &outs {
            run_config(command, &path, out)?;
        }
        for file in ["model.sgm", "history.csv"] {
            ensure!(
                read(&outs[0], file)? == read(&outs[1], file)?,
                "{command}: {file} differs between identical runs"
            );
        }
        // A different seed must change the result, or the comparison says nothing.
        let other = root.join(format!("{name}-seed"));
        run_command(
            command,
            &path,
            &RunOptions {
                seed: Some(8),
                out: Some(other.clone()),
            },
        )?;
        ensure!(
            read(&outs[0], "model.sgm")? != read(&other, "model.sgm")?,
            "{command}: seed has no effect"
        );
    }

    // No leakage: rewriting every validation/test input leaves the fitted
    // statistics, and hence a run without early stopping, unchanged.
    let ds = two_blobs(300, 5)?;
    let config = json!({
        "name": "leak", "seed": 3,
        "data": { "source": "file", "path": "blobs.sgd" },
        "model": { "preset": "mlp" },
        "train": { "epochs": 5, "patience": 0, "loss": "binary_cross_entropy", "batch_size": 10 }
    });
    let leak = root.join("leak");
    std::fs::create_dir_all(&leak)?;
    let path = write_config(&leak, "leak", &config)?;
    let spec = load_config(&path)?.split.spec(3);
    let (tr, _, _) = split(&ds, &spec)?;
    let in_train = |e: &Example| tr.examples.iter().any(|t| t.input == e.input);
    let mut mutated = ds.clone();
    let mut changed = 0;
    let mut rng = rng_from_seed(99);
    for e in mutated.examples.iter_mut().filter(|e| !in_train(e)) {
        e.input = Tensor::uniform(e.input.shape().to_vec(), 1000.0, &mut rng);
        changed += 1;
    }
    ensure!(changed == 90, "{changed} held-out examples mutated");
    let (tr2, va2, te2) = split(&mutated, &spec)?;
    let (s1, s2) = (Standardizer::fit(&tr)?, Standardizer::fit(&tr2)?);
    ensure!(s1 == s2, "standardizer statistics moved with held-out data");
    ensure!(
        va2.examples
            .iter()
            .chain(&te2.examples)
            .all(|e| !in_train(e)),
        "held-out split changed"
    );
    minidl::data::save_dataset(&ds, leak.join("blobs.sgd"))?;
    run_config(Command::Train, &path, &leak.join("original"))?;
    minidl::data::save_dataset(&mutated, leak.join("blobs.sgd"))?;
    run_config(Command::Train, &path, &leak.join("mutated"))?;
    ensure!(
        read(&leak.join("original"), "model.sgm")? == read(&leak.join("mutated"), "model.sgm")?,
        "trained model depends on held-out inputs"
    );
    ensure!(
        read(&leak.join("original"), "history.csv")? != read(&leak.join("mutated"), "history.csv")?,
        "mutation did not reach the validation split"
    );

    // Scripted validation losses: improvement at epochs 1, 2 and 4 (an
    // equal loss is not an improvement), so patience 3 fires at epoch 7.
    let script = [1.0, 0.8, 0.8, 0.7, 0.75, 0.7, 0.9, 0.1];
    let mut es = EarlyStopping::new(3);
    let fired = script.iter().position(|&l| es.observe(l)).map(|i| i + 1);
    ensure!(fired == Some(7), "scripted stop at {fired:?}, expected 7");
    ensure!(es.best_epoch() == 4, "best epoch {}", es.best_epoch());

    // Through the training loop: a fully frozen network has a constant
    // validation loss, improving only at epoch 1.
    let (tr, va, _) = blob_splits()?;
    for patience in [1usize, 2, 5] {
        let mut net = mlp(4)?;
        let all: Vec<usize> = (0..net.layers().len()).collect();
        net.freeze(&all)?;
        let h = train(
            &mut net,
            &tr,
            &va,
            &TrainConfig {
                patience,
                ..TrainConfig::new(50, LossKind::BinaryCrossEntropy)
            },
        )?;
        ensure!(
            h.stop_reason == StopReason::EarlyStop,
            "patience {patience}: no early stop"
        );
        ensure!(
            h.records.len() == 1 + patience,
            "patience {patience}: stopped after {} epochs",
            h.records.len()
        );
        ensure!(
            h.best_epoch == 1,
            "patience {patience}: best epoch {}",
            h.best_epoch
        );
    }
    Ok("4 training subcommands bitwise reproducible; standardizer leak-free; early stop at scripted epochs".into())
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = tmp.path().to_path_buf();
    type Check = Box<dyn Fn() -> Result<String>>;
    let criteria: Vec<(&str, Check)> = vec![
        ("gradient oracle", Box::new(criterion_gradients)),
        ("shape arithmetic", Box::new(criterion_arithmetic)),
        ("softmax", Box::new(criterion_softmax)),
        (
            "two-blob mlp",
            Box::new({
                let d = dir.clone();
                move || criterion_blobs(&d)
            }),
        ),
        (
            "alexnet-mini on synth_tools",
            Box::new({
                let d = dir.clone();
                move || criterion_tools(&d)
            }),
        ),
        (
            "segmenter-mini",
            Box::new({
                let d = dir.clone();
                move || criterion_segmentation(&d)
            }),
        ),
        ("regularization", Box::new(criterion_regularization)),
        (
            "recurrent",
            Box::new({
                let d = dir.clone();
                move || criterion_recurrent(&d)
            }),
        ),
        (
            "generative",
            Box::new({
                let d = dir.clone();
                move || criterion_generative(&d)
            }),
        ),
        (
            "determinism and hygiene",
            Box::new({
                let d = dir.clone();
                move || criterion_determinism(&d)
            }),
        ),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(anyhow!("panicked: {msg}"))
        });
        match result {
            Ok(msg) => println!("PASS {n:>2} {name}: {msg}"),
            Err(e) => {
                failures += 1;
                println!("FAIL {n:>2} {name}: {e:#}");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

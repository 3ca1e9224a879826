//! Central finite differences, the reference against which every analytic
//! gradient in the crate is checked.

use crate::error::{Error, Result};
use crate::layers::{Layer, LayerCache, Mode};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Finite-difference gradient of `f` at `x`.
///
/// `f` returns the scalar value together with a kink signature (see
/// [`crate::layers::LayerCache::kink_signature`]). Entries whose `±eps`
/// probes land on different sides of a nondifferentiable boundary are
/// reported as `None`.
pub fn numeric_gradient<F>(x: &Tensor, eps: f64, mut f: F) -> Result<Vec<Option<f64>>>
where
    F: FnMut(&Tensor) -> Result<(f64, Vec<u64>)>,
{
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (plus, sig_plus) = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let (minus, sig_minus) = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss while probing entry {i}: {plus} / {minus}"
            )));
        }
        out.push((sig_plus == sig_minus).then(|| (plus - minus) / (2.0 * eps)));
    }
    Ok(out)
}

/// Largest relative error between an analytic gradient and numeric
/// estimates, ignoring excluded (`None`) entries.
pub fn max_relative_error(analytic: &Tensor, numeric: &[Option<f64>]) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric)
        .filter_map(|(&a, n)| n.map(|n| relative_error(a, n)))
        .fold(0.0, f64::max)
}

/// Checks one layer's backward pass against finite differences of the probe
/// loss `Σ r ⊙ (forward(x) − forward(x₀))` with a random `r`. Covers the input gradient and
/// every parameter tensor; returns the largest relative error.
pub fn layer_gradient_error(layer: &Layer, x: &Tensor, probe_seed: u64, eps: f64) -> Result<f64> {
    let mut probe_rng = rng_from_seed(probe_seed);
    // Dropout masks are replayed by reseeding for every evaluation.
    let mask_seed = derive_seed(probe_seed, "dropout");
    let run = |l: &Layer, input: &Tensor| -> Result<(Tensor, LayerCache)> {
        l.forward(input, Mode::Training, &mut rng_from_seed(mask_seed))
    };
    let (y, cache) = run(layer, x)?;
    let r = Tensor::standard_normal(y.shape().to_vec(), &mut probe_rng);
    // `Σ r ⊙ (y − y₀)` has the same gradient as `Σ r ⊙ y` but stays near zero,
    // so the difference quotient does not lose digits to a large loss value.
    let base = y.clone();
    let probe = |l: &Layer, input: &Tensor| -> Result<(f64, Vec<u64>)> {
        let (y, cache) = run(l, input)?;
        let mut sig = Vec::new();
        cache.kink_signature(&mut sig);
        let centred: f64 = y
            .data()
            .iter()
            .zip(base.data())
            .zip(r.data())
            .map(|((a, b), r)| (a - b) * r)
            .sum();
        Ok((centred, sig))
    };
    let (grad_x, grad_params) = layer.backward(cache, &r)?;

    let mut worst = max_relative_error(&grad_x, &numeric_gradient(x, eps, |xp| probe(layer, xp))?);
    for (pi, grad) in grad_params.iter().enumerate() {
        let base = layer.params()[pi].clone();
        let numeric = numeric_gradient(&base, eps, |pp| {
            let mut l = layer.clone();
            *l.params_mut()[pi] = pp.clone();
            probe(&l, x)
        })?;
        worst = worst.max(max_relative_error(grad, &numeric));
    }
    Ok(worst)
}

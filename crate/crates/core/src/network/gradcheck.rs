use serde::Serialize;

use super::{Network, ParamGrads};
use crate::error::{Error, Result};
use crate::layers::{Layer, Mode};
use crate::numeric::{numeric_gradient, relative_error};
use crate::optim::{loss, LossKind};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Parameter scalars compared.
    pub checked: usize,
    /// Scalars whose probes straddled a ReLU/step/max-pool/MAE kink.
    pub skipped: usize,
}

/// Loss at `x` plus the kink signature of the forward pass.
fn probe(net: &Network, x: &Tensor, target: &Tensor, kind: LossKind) -> Result<(f64, Vec<u64>)> {
    let (y, caches) = net.forward(x, Mode::Training, &mut rng_from_seed(0))?;
    let mut sig = Vec::new();
    for c in &caches {
        c.kink_signature(&mut sig);
    }
    if kind.has_kink() {
        sig.extend(
            y.data()
                .iter()
                .zip(target.data())
                .map(|(p, t)| u64::from(p > t) | (u64::from(p < t) << 1)),
        );
    }
    Ok((loss(kind, &y, target)?.0, sig))
}

fn check_preconditions(net: &Network, eps: f64) -> Result<()> {
    if !(1e-8..=1e-4).contains(&eps) {
        return Err(Error::config(format!(
            "finite-difference step {eps} outside [1e-8, 1e-4]"
        )));
    }
    if net
        .layers()
        .iter()
        .any(|l| matches!(l, Layer::Dropout(d) if d.rate > 0.0))
    {
        return Err(Error::config(
            "gradient check requires every dropout rate to be 0",
        ));
    }
    Ok(())
}

/// Compares `analytic` parameter gradients (aligned with the network's
/// layers) against central differences of the loss. Frozen layers are
/// skipped.
pub fn compare_with_numeric(
    net: &Network,
    x: &Tensor,
    target: &Tensor,
    kind: LossKind,
    eps: f64,
    tolerance: f64,
    analytic: &ParamGrads,
) -> Result<GradCheckReport> {
    check_preconditions(net, eps)?;
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    let mut work = net.clone();
    for (li, layer) in net.layers().iter().enumerate() {
        if layer.is_frozen() {
            continue;
        }
        for (pi, base) in layer.params().into_iter().enumerate() {
            let grad = &analytic[li][pi];
            let numeric = numeric_gradient(base, eps, |p| {
                *work.layers[li].params_mut()[pi] = p.clone();
                probe(&work, x, target, kind)
            })?;
            *work.layers[li].params_mut()[pi] = base.clone();
            for (&a, n) in grad.data().iter().zip(numeric) {
                match n {
                    Some(n) => {
                        checked += 1;
                        worst = worst.max(relative_error(a, n));
                    }
                    None => skipped += 1,
                }
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        tolerance,
        pass: worst < tolerance,
        checked,
        skipped,
    })
}

/// Backpropagation versus central finite differences for one example.
pub fn gradient_check(
    net: &Network,
    x: &Tensor,
    target: &Tensor,
    kind: LossKind,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    check_preconditions(net, eps)?;
    let (y, caches) = net.forward(x, Mode::Training, &mut rng_from_seed(0))?;
    let (value, grad) = loss(kind, &y, target)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss {value} at the check point"
        )));
    }
    let analytic = net.backward(caches, &grad)?.params;
    compare_with_numeric(net, x, target, kind, eps, tolerance, &analytic)
}

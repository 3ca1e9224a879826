use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::sigmoid;
use crate::rng::SeededRng;
use crate::tensor::{affine, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Tanh,
    /// Identity; used to study gradient flow through a purely linear recurrence.
    Linear,
}

impl HiddenActivation {
    fn apply(self, a: f64) -> f64 {
        match self {
            HiddenActivation::Tanh => a.tanh(),
            HiddenActivation::Linear => a,
        }
    }

    /// Derivative expressed through the output `h`.
    fn derivative(self, h: f64) -> f64 {
        match self {
            HiddenActivation::Tanh => 1.0 - h * h,
            HiddenActivation::Linear => 1.0,
        }
    }
}

fn expect_shape(t: &Tensor, shape: &[usize], what: &str) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::dim(format!(
            "{what}: expected {shape:?}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn uniform(shape: [usize; 2], fan_in: usize, rng: &mut SeededRng) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let data = (0..shape[0] * shape[1])
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("valid shape")
}

/// `Wᵀ·g` for `W: [m,n]`, `g: [m]`.
pub(crate) fn matvec_t(w: &Tensor, g: &[f64]) -> Vec<f64> {
    let n = w.shape()[1];
    let mut out = vec![0.0; n];
    for (row, &gi) in w.data().chunks_exact(n).zip(g) {
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += gi * wv;
        }
    }
    out
}

/// `acc += g·xᵀ`.
pub(crate) fn add_outer(acc: &mut Tensor, g: &[f64], x: &[f64]) {
    let n = x.len();
    for (row, &gi) in acc.data_mut().chunks_exact_mut(n).zip(g) {
        for (a, &xv) in row.iter_mut().zip(x) {
            *a += gi * xv;
        }
    }
}

pub(crate) fn add_to(acc: &mut Tensor, g: &[f64]) {
    for (a, &v) in acc.data_mut().iter_mut().zip(g) {
        *a += v;
    }
}

/// Elman cell: `h = act(W_xh·x + W_hh·h_prev + b_h)`, `y = W_hy·h + b_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnCell {
    pub w_xh: Tensor,
    pub w_hh: Tensor,
    pub b_h: Tensor,
    pub w_hy: Tensor,
    pub b_y: Tensor,
    pub activation: HiddenActivation,
}

/// What one simple-cell step keeps for backpropagation.
#[derive(Debug, Clone)]
pub struct RnnStepCache {
    x: Tensor,
    h_prev: Tensor,
    h: Tensor,
}

impl RnnCell {
    pub fn new(
        w_xh: Tensor,
        w_hh: Tensor,
        b_h: Tensor,
        w_hy: Tensor,
        b_y: Tensor,
        activation: HiddenActivation,
    ) -> Result<Self> {
        if w_xh.rank() != 2 || w_hy.rank() != 2 {
            return Err(Error::dim("input and output maps must be matrices"));
        }
        let h = w_xh.shape()[0];
        let o = w_hy.shape()[0];
        expect_shape(&w_hh, &[h, h], "recurrence matrix")?;
        expect_shape(&b_h, &[h], "hidden bias")?;
        expect_shape(&w_hy, &[o, h], "output map")?;
        expect_shape(&b_y, &[o], "output bias")?;
        Ok(RnnCell {
            w_xh,
            w_hh,
            b_h,
            w_hy,
            b_y,
            activation,
        })
    }

    /// Uniform `±1/√fan_in` weights, zero biases.
    pub fn init(
        inputs: usize,
        hidden: usize,
        outputs: usize,
        activation: HiddenActivation,
        rng: &mut SeededRng,
    ) -> Self {
        RnnCell {
            w_xh: uniform([hidden, inputs], inputs, rng),
            w_hh: uniform([hidden, hidden], hidden, rng),
            b_h: Tensor::zeros([hidden]),
            w_hy: uniform([outputs, hidden], hidden, rng),
            b_y: Tensor::zeros([outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w_xh.shape()[1]
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.w_hy.shape()[0]
    }

    /// Order: `W_xh, W_hh, b_h, W_hy, b_y`.
    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.w_xh, &self.w_hh, &self.b_h, &self.w_hy, &self.b_y]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_xh,
            &mut self.w_hh,
            &mut self.b_h,
            &mut self.w_hy,
            &mut self.b_y,
        ]
    }

    pub(crate) fn weight_flags() -> Vec<bool> {
        vec![true, true, false, true, false]
    }

    /// One time step. Returns `(y, h, cache)`.
    pub fn step(&self, x: &Tensor, h_prev: &Tensor) -> Result<(Tensor, Tensor, RnnStepCache)> {
        expect_shape(x, &[self.inputs()], "rnn step input")?;
        expect_shape(h_prev, &[self.hidden()], "rnn step state")?;
        let mut a = affine(&self.w_xh, x, &self.b_h)?;
        let rec = affine(&self.w_hh, h_prev, &Tensor::zeros([self.hidden()]))?;
        a.add_assign(&rec)?;
        let h = a.map(|v| self.activation.apply(v));
        let y = affine(&self.w_hy, &h, &self.b_y)?;
        let cache = RnnStepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            h: h.clone(),
        };
        Ok((y, h, cache))
    }

    /// Backward through one step. Accumulates parameter gradients into
    /// `grads` and returns `(∂/∂x, ∂/∂h_prev)`.
    pub(crate) fn step_backward(
        &self,
        cache: &RnnStepCache,
        dy: &Tensor,
        dh_next: &[f64],
        grads: &mut [Tensor],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        expect_shape(dy, &[self.outputs()], "rnn output gradient")?;
        let mut dh = matvec_t(&self.w_hy, dy.data());
        for (d, &n) in dh.iter_mut().zip(dh_next) {
            *d += n;
        }
        let da: Vec<f64> = dh
            .iter()
            .zip(cache.h.data())
            .map(|(&g, &h)| g * self.activation.derivative(h))
            .collect();
        add_outer(&mut grads[0], &da, cache.x.data());
        add_outer(&mut grads[1], &da, cache.h_prev.data());
        add_to(&mut grads[2], &da);
        add_outer(&mut grads[3], dy.data(), cache.h.data());
        add_to(&mut grads[4], dy.data());
        Ok((matvec_t(&self.w_xh, &da), matvec_t(&self.w_hh, &da)))
    }
}

/// Long short-term memory cell over `z = [x, h_prev]`:
///
/// ```text
/// i = σ(W_i·z + b_i)   f = σ(W_f·z + b_f)   o = σ(W_o·z + b_o)
/// g = tanh(W_g·z + b_g)
/// c = f⊙c_prev + i⊙g
/// h = o⊙tanh(c)        y = W_hy·h + b_y
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GatedCell {
    pub w_i: Tensor,
    pub b_i: Tensor,
    pub w_f: Tensor,
    pub b_f: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub w_g: Tensor,
    pub b_g: Tensor,
    pub w_hy: Tensor,
    pub b_y: Tensor,
}

/// What one gated-cell step keeps for backpropagation.
#[derive(Debug, Clone)]
pub struct GatedStepCache {
    z: Tensor,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Tensor,
}

impl GatedCell {
    pub fn init(inputs: usize, hidden: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let z = inputs + hidden;
        GatedCell {
            w_i: uniform([hidden, z], z, rng),
            b_i: Tensor::zeros([hidden]),
            w_f: uniform([hidden, z], z, rng),
            // Forget bias starts at 1 so early training keeps the memory open.
            b_f: Tensor::full([hidden], 1.0),
            w_o: uniform([hidden, z], z, rng),
            b_o: Tensor::zeros([hidden]),
            w_g: uniform([hidden, z], z, rng),
            b_g: Tensor::zeros([hidden]),
            w_hy: uniform([outputs, hidden], hidden, rng),
            b_y: Tensor::zeros([outputs]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.b_i.len();
        let z = self.w_i.shape().get(1).copied().unwrap_or(0);
        if z <= h {
            return Err(Error::dim("gate matrices must be [h, n + h] with n ≥ 1"));
        }
        for (w, b, name) in [
            (&self.w_i, &self.b_i, "input gate"),
            (&self.w_f, &self.b_f, "forget gate"),
            (&self.w_o, &self.b_o, "output gate"),
            (&self.w_g, &self.b_g, "candidate"),
        ] {
            expect_shape(w, &[h, z], name)?;
            expect_shape(b, &[h], name)?;
        }
        let o = self.b_y.len();
        expect_shape(&self.w_hy, &[o, h], "output map")?;
        expect_shape(&self.b_y, &[o], "output bias")
    }

    pub fn inputs(&self) -> usize {
        self.w_i.shape()[1] - self.hidden()
    }

    pub fn hidden(&self) -> usize {
        self.b_i.len()
    }

    pub fn outputs(&self) -> usize {
        self.b_y.len()
    }

    /// Order: `W_i, b_i, W_f, b_f, W_o, b_o, W_g, b_g, W_hy, b_y`.
    pub fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.w_i, &self.b_i, &self.w_f, &self.b_f, &self.w_o, &self.b_o, &self.w_g, &self.b_g,
            &self.w_hy, &self.b_y,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_i,
            &mut self.b_i,
            &mut self.w_f,
            &mut self.b_f,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.w_g,
            &mut self.b_g,
            &mut self.w_hy,
            &mut self.b_y,
        ]
    }

    pub(crate) fn weight_flags() -> Vec<bool> {
        vec![
            true, false, true, false, true, false, true, false, true, false,
        ]
    }

    /// One time step. Returns `(y, h, c, cache)`.
    pub fn step(
        &self,
        x: &Tensor,
        h_prev: &Tensor,
        c_prev: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor, GatedStepCache)> {
        let h = self.hidden();
        expect_shape(x, &[self.inputs()], "gated step input")?;
        expect_shape(h_prev, &[h], "gated step state")?;
        expect_shape(c_prev, &[h], "gated step memory")?;
        let z = Tensor::concat(&[x, h_prev]);
        let gate = |w: &Tensor, b: &Tensor, f: fn(f64) -> f64| -> Result<Vec<f64>> {
            Ok(affine(w, &z, b)?.data().iter().map(|&v| f(v)).collect())
        };
        let i = gate(&self.w_i, &self.b_i, sigmoid)?;
        let f = gate(&self.w_f, &self.b_f, sigmoid)?;
        let o = gate(&self.w_o, &self.b_o, sigmoid)?;
        let g = gate(&self.w_g, &self.b_g, f64::tanh)?;
        let c: Vec<f64> = (0..h)
            .map(|k| f[k] * c_prev.data()[k] + i[k] * g[k])
            .collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h_new = Tensor::new([h], (0..h).map(|k| o[k] * tanh_c[k]).collect())?;
        let y = affine(&self.w_hy, &h_new, &self.b_y)?;
        let cache = GatedStepCache {
            z,
            i,
            f,
            o,
            g,
            c_prev: c_prev.data().to_vec(),
            tanh_c,
            h: h_new.clone(),
        };
        Ok((y, h_new, Tensor::new([h], c)?, cache))
    }

    /// Backward through one step. Returns `(∂/∂x, ∂/∂h_prev, ∂/∂c_prev)`.
    pub(crate) fn step_backward(
        &self,
        cache: &GatedStepCache,
        dy: &Tensor,
        dh_next: &[f64],
        dc_next: &[f64],
        grads: &mut [Tensor],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        expect_shape(dy, &[self.outputs()], "gated output gradient")?;
        let h = self.hidden();
        let mut dh = matvec_t(&self.w_hy, dy.data());
        for (d, &n) in dh.iter_mut().zip(dh_next) {
            *d += n;
        }
        add_outer(&mut grads[8], dy.data(), cache.h.data());
        add_to(&mut grads[9], dy.data());

        let mut da = [vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h]];
        let mut dc_prev = vec![0.0; h];
        for k in 0..h {
            let (i, f, o, g, tc) = (
                cache.i[k],
                cache.f[k],
                cache.o[k],
                cache.g[k],
                cache.tanh_c[k],
            );
            let d_o = dh[k] * tc;
            let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
            da[0][k] = dc * g * i * (1.0 - i);
            da[1][k] = dc * cache.c_prev[k] * f * (1.0 - f);
            da[2][k] = d_o * o * (1.0 - o);
            da[3][k] = dc * i * (1.0 - g * g);
            dc_prev[k] = dc * f;
        }
        let mut dz = vec![0.0; cache.z.len()];
        for (gate, (d, w)) in da
            .iter()
            .zip([&self.w_i, &self.w_f, &self.w_o, &self.w_g])
            .enumerate()
        {
            add_outer(&mut grads[2 * gate], d, cache.z.data());
            add_to(&mut grads[2 * gate + 1], d);
            for (acc, v) in dz.iter_mut().zip(matvec_t(w, d)) {
                *acc += v;
            }
        }
        let n = self.inputs();
        let dh_prev = dz.split_off(n);
        Ok((dz, dh_prev, dc_prev))
    }
}

//! Direct (cross-correlation) convolution via im2col, plus the depth-wise
//! separable variant.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{zero_pad2d, Tensor};

/// `floor((input + 2·padding − kernel) / stride) + 1`.
pub fn conv_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::dim("stride must be positive"));
    }
    if kernel == 0 {
        return Err(Error::dim("kernel extent must be positive"));
    }
    let padded = input + 2 * padding;
    if kernel > padded {
        return Err(Error::dim(format!(
            "kernel {kernel} larger than padded input {padded} (input {input}, padding {padding})"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub(crate) fn chw(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::dim(format!(
            "{what} expects [C,H,W], got {:?}",
            x.shape()
        ))),
    }
}

/// Geometry of one sliding-window pass.
#[derive(Debug, Clone, Copy)]
struct Window {
    channels: usize,
    padded_h: usize,
    padded_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
}

impl Window {
    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Rows indexed by `(c, u, v)`, columns by output position.
fn im2col(xp: &[f64], g: &Window) -> Vec<f64> {
    let cols = g.out_len();
    let mut col = vec![0.0; g.patch_len() * cols];
    for c in 0..g.channels {
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = (c * g.kh + u) * g.kw + v;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for i in 0..g.out_h {
                    let src_row = (c * g.padded_h + i * g.stride + u) * g.padded_w + v;
                    let d = &mut dst[i * g.out_w..(i + 1) * g.out_w];
                    if g.stride == 1 {
                        d.copy_from_slice(&xp[src_row..src_row + g.out_w]);
                    } else {
                        for (j, o) in d.iter_mut().enumerate() {
                            *o = xp[src_row + j * g.stride];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-adds columns back into a padded image; adjoint of [`im2col`].
fn col2im(col: &[f64], g: &Window) -> Vec<f64> {
    let cols = g.out_len();
    let mut xp = vec![0.0; g.channels * g.padded_h * g.padded_w];
    for c in 0..g.channels {
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = (c * g.kh + u) * g.kw + v;
                let src = &col[row * cols..(row + 1) * cols];
                for i in 0..g.out_h {
                    let dst_row = (c * g.padded_h + i * g.stride + u) * g.padded_w + v;
                    let s = &src[i * g.out_w..(i + 1) * g.out_w];
                    for (j, &val) in s.iter().enumerate() {
                        xp[dst_row + j * g.stride] += val;
                    }
                }
            }
        }
    }
    xp
}

fn crop(padded: &[f64], c: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    if pad == 0 {
        return padded.to_vec();
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let start = (ch * ph + y + pad) * pw + pad;
            out.extend_from_slice(&padded[start..start + w]);
        }
    }
    out
}

/// Standard 2-D convolution layer with `K` filters of shape `[C, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub filters: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub frozen: bool,
}

/// Saved by [`Conv2d::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    pub(crate) input_shape: [usize; 3],
    col: Vec<f64>,
}

impl Conv2d {
    pub fn new(filters: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        if filters.rank() != 4 || bias.shape() != [filters.shape()[0]] {
            return Err(Error::dim(format!(
                "conv: filters {:?} and bias {:?} are inconsistent",
                filters.shape(),
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::config("conv stride must be positive"));
        }
        Ok(Conv2d {
            filters,
            bias,
            stride,
            padding,
            frozen: false,
        })
    }

    /// Uniform `±1/√(C·kh·kw)` filters, zero bias.
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Conv2d::new(
            Tensor::uniform(vec![out_channels, in_channels, kernel, kernel], bound, rng),
            Tensor::zeros(vec![out_channels]),
            stride,
            padding,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.filters.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.filters.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.filters.shape()[2], self.filters.shape()[3])
    }

    pub fn param_count(&self) -> usize {
        self.filters.len() + self.bias.len()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [c, h, w] = *input else {
            return Err(Error::dim(format!("conv expects [C,H,W], got {input:?}")));
        };
        if c != self.in_channels() {
            return Err(Error::dim(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let (kh, kw) = self.kernel();
        Ok(vec![
            self.out_channels(),
            conv_output_extent(h, kh, self.stride, self.padding)?,
            conv_output_extent(w, kw, self.stride, self.padding)?,
        ])
    }

    fn window(&self, c: usize, h: usize, w: usize) -> Result<Window> {
        let (kh, kw) = self.kernel();
        Ok(Window {
            channels: c,
            padded_h: h + 2 * self.padding,
            padded_w: w + 2 * self.padding,
            kh,
            kw,
            stride: self.stride,
            out_h: conv_output_extent(h, kh, self.stride, self.padding)?,
            out_w: conv_output_extent(w, kw, self.stride, self.padding)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let out_shape = self.output_shape(x.shape())?;
        let (c, h, w) = chw(x, "conv")?;
        let g = self.window(c, h, w)?;
        let xp = zero_pad2d(x, self.padding)?;
        let col = im2col(xp.data(), &g);

        let (k, p, n) = (self.out_channels(), g.patch_len(), g.out_len());
        let f = self.filters.data();
        let mut out = vec![0.0; k * n];
        for (ki, orow) in out.chunks_exact_mut(n).enumerate() {
            orow.fill(self.bias.data()[ki]);
            for r in 0..p {
                let fv = f[ki * p + r];
                if fv == 0.0 {
                    continue;
                }
                let crow = &col[r * n..(r + 1) * n];
                for (o, &cv) in orow.iter_mut().zip(crow) {
                    *o += fv * cv;
                }
            }
        }
        Ok((
            Tensor::new(out_shape, out)?,
            ConvCache {
                input_shape: [c, h, w],
                col,
            },
        ))
    }

    pub fn backward(&self, cache: &ConvCache, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let [c, h, w] = cache.input_shape;
        let g = self.window(c, h, w)?;
        let (k, p, n) = (self.out_channels(), g.patch_len(), g.out_len());
        if grad_out.shape() != [k, g.out_h, g.out_w] {
            return Err(Error::dim(format!(
                "conv backward: grad shape {:?}, expected {:?}",
                grad_out.shape(),
                [k, g.out_h, g.out_w]
            )));
        }
        let dout = grad_out.data();
        let f = self.filters.data();

        let mut dfilters = vec![0.0; k * p];
        let mut dbias = vec![0.0; k];
        let mut dcol = vec![0.0; p * n];
        for ki in 0..k {
            let grow = &dout[ki * n..(ki + 1) * n];
            dbias[ki] = grow.iter().sum();
            for r in 0..p {
                let crow = &cache.col[r * n..(r + 1) * n];
                dfilters[ki * p + r] = grow.iter().zip(crow).map(|(a, b)| a * b).sum();
                let fv = f[ki * p + r];
                for (d, &gv) in dcol[r * n..(r + 1) * n].iter_mut().zip(grow) {
                    *d += fv * gv;
                }
            }
        }
        let dxp = col2im(&dcol, &g);
        let dx = crop(&dxp, c, h, w, self.padding);
        Ok((
            Tensor::new(vec![c, h, w], dx)?,
            vec![
                Tensor::new(self.filters.shape().to_vec(), dfilters)?,
                Tensor::new(vec![k], dbias)?,
            ],
        ))
    }
}

/// Per-channel spatial convolution followed by a 1×1 cross-channel mix.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseSeparable {
    /// `[C, 1, kh, kw]`
    pub depthwise: Tensor,
    /// `[C]`
    pub depthwise_bias: Tensor,
    /// `[K, C, 1, 1]`
    pub pointwise: Tensor,
    /// `[K]`
    pub pointwise_bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub frozen: bool,
}

#[derive(Debug, Clone)]
pub struct SeparableCache {
    pub(crate) input_shape: [usize; 3],
    padded: Tensor,
    depthwise_out: Tensor,
}

impl DepthwiseSeparable {
    pub fn new(
        depthwise: Tensor,
        depthwise_bias: Tensor,
        pointwise: Tensor,
        pointwise_bias: Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let ok = depthwise.rank() == 4
            && depthwise.shape()[1] == 1
            && depthwise_bias.shape() == [depthwise.shape()[0]]
            && pointwise.rank() == 4
            && pointwise.shape()[1] == depthwise.shape()[0]
            && pointwise.shape()[2..] == [1, 1]
            && pointwise_bias.shape() == [pointwise.shape()[0]];
        if !ok {
            return Err(Error::dim(format!(
                "separable conv: inconsistent shapes depthwise {:?}/{:?}, pointwise {:?}/{:?}",
                depthwise.shape(),
                depthwise_bias.shape(),
                pointwise.shape(),
                pointwise_bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::config("conv stride must be positive"));
        }
        Ok(DepthwiseSeparable {
            depthwise,
            depthwise_bias,
            pointwise,
            pointwise_bias,
            stride,
            padding,
            frozen: false,
        })
    }

    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let db = 1.0 / ((kernel * kernel) as f64).sqrt();
        let pb = 1.0 / (in_channels as f64).sqrt();
        DepthwiseSeparable::new(
            Tensor::uniform(vec![in_channels, 1, kernel, kernel], db, rng),
            Tensor::zeros(vec![in_channels]),
            Tensor::uniform(vec![out_channels, in_channels, 1, 1], pb, rng),
            Tensor::zeros(vec![out_channels]),
            stride,
            padding,
        )
    }

    pub fn in_channels(&self) -> usize {
        self.depthwise.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.pointwise.shape()[0]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.depthwise.shape()[2], self.depthwise.shape()[3])
    }

    /// `C·kh·kw + K·C + C + K`.
    pub fn param_count(&self) -> usize {
        self.depthwise.len()
            + self.depthwise_bias.len()
            + self.pointwise.len()
            + self.pointwise_bias.len()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [c, h, w] = *input else {
            return Err(Error::dim(format!(
                "separable conv expects [C,H,W], got {input:?}"
            )));
        };
        if c != self.in_channels() {
            return Err(Error::dim(format!(
                "separable conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let (kh, kw) = self.kernel();
        Ok(vec![
            self.out_channels(),
            conv_output_extent(h, kh, self.stride, self.padding)?,
            conv_output_extent(w, kw, self.stride, self.padding)?,
        ])
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, SeparableCache)> {
        let out_shape = self.output_shape(x.shape())?;
        let (c, h, w) = chw(x, "separable conv")?;
        let (oh, ow) = (out_shape[1], out_shape[2]);
        let (kh, kw) = self.kernel();
        let s = self.stride;
        let xp = zero_pad2d(x, self.padding)?;
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        let (xd, fd) = (xp.data(), self.depthwise.data());

        let n = oh * ow;
        let mut dw = vec![0.0; c * n];
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = self.depthwise_bias.data()[ch];
                    for u in 0..kh {
                        let row = (ch * ph + i * s + u) * pw + j * s;
                        for v in 0..kw {
                            acc += fd[(ch * kh + u) * kw + v] * xd[row + v];
                        }
                    }
                    dw[ch * n + i * ow + j] = acc;
                }
            }
        }

        let k = self.out_channels();
        let fp = self.pointwise.data();
        let mut out = vec![0.0; k * n];
        for (ki, orow) in out.chunks_exact_mut(n).enumerate() {
            orow.fill(self.pointwise_bias.data()[ki]);
            for ch in 0..c {
                let fv = fp[ki * c + ch];
                for (o, &d) in orow.iter_mut().zip(&dw[ch * n..(ch + 1) * n]) {
                    *o += fv * d;
                }
            }
        }
        Ok((
            Tensor::new(out_shape, out)?,
            SeparableCache {
                input_shape: [c, h, w],
                padded: xp,
                depthwise_out: Tensor::new(vec![c, oh, ow], dw)?,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &SeparableCache,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let [c, h, w] = cache.input_shape;
        let (oh, ow) = (
            cache.depthwise_out.shape()[1],
            cache.depthwise_out.shape()[2],
        );
        let k = self.out_channels();
        if grad_out.shape() != [k, oh, ow] {
            return Err(Error::dim(format!(
                "separable conv backward: grad shape {:?}, expected {:?}",
                grad_out.shape(),
                [k, oh, ow]
            )));
        }
        let n = oh * ow;
        let (kh, kw) = self.kernel();
        let s = self.stride;
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        let g = grad_out.data();
        let dwo = cache.depthwise_out.data();
        let fp = self.pointwise.data();
        let fd = self.depthwise.data();
        let xd = cache.padded.data();

        let mut dpw = vec![0.0; k * c];
        let mut dpb = vec![0.0; k];
        let mut ddw_out = vec![0.0; c * n];
        for ki in 0..k {
            let grow = &g[ki * n..(ki + 1) * n];
            dpb[ki] = grow.iter().sum();
            for ch in 0..c {
                let drow = &dwo[ch * n..(ch + 1) * n];
                dpw[ki * c + ch] = grow.iter().zip(drow).map(|(a, b)| a * b).sum();
                let fv = fp[ki * c + ch];
                for (d, &gv) in ddw_out[ch * n..(ch + 1) * n].iter_mut().zip(grow) {
                    *d += fv * gv;
                }
            }
        }

        let mut dfd = vec![0.0; c * kh * kw];
        let mut dbd = vec![0.0; c];
        let mut dxp = vec![0.0; c * ph * pw];
        for ch in 0..c {
            dbd[ch] = ddw_out[ch * n..(ch + 1) * n].iter().sum();
            for i in 0..oh {
                for j in 0..ow {
                    let gv = ddw_out[ch * n + i * ow + j];
                    for u in 0..kh {
                        let row = (ch * ph + i * s + u) * pw + j * s;
                        for v in 0..kw {
                            let fi = (ch * kh + u) * kw + v;
                            dfd[fi] += gv * xd[row + v];
                            dxp[row + v] += gv * fd[fi];
                        }
                    }
                }
            }
        }
        let dx = crop(&dxp, c, h, w, self.padding);
        Ok((
            Tensor::new(vec![c, h, w], dx)?,
            vec![
                Tensor::new(self.depthwise.shape().to_vec(), dfd)?,
                Tensor::new(vec![c], dbd)?,
                Tensor::new(self.pointwise.shape().to_vec(), dpw)?,
                Tensor::new(vec![k], dpb)?,
            ],
        ))
    }
}

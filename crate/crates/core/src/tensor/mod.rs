//! Dense row-major `f64` tensors.
//!
//! Image tensors are laid out `[channels, height, width]`. There is no
//! implicit broadcasting: every binary operation requires equal shapes or an
//! explicit scalar.

mod sgt;

pub use sgt::{load_tensor, read_tensor, save_tensor, write_tensor, SGT_MAGIC};

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::dim("tensor rank must be at least 1"));
    }
    if shape.contains(&0) {
        return Err(Error::dim(format!("zero extent in shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Rank-1 tensor from a slice.
    pub fn vector(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "empty vector");
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    /// Rank-2 tensor from rows of equal length.
    pub fn matrix(rows: &[&[f64]]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::dim("ragged matrix rows"));
        }
        Tensor::new(
            vec![m, n],
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = check_shape(&shape).expect("invalid shape");
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(shape: impl Into<Vec<usize>>, bound: f64, rng: &mut SeededRng) -> Self {
        let mut t = Tensor::zeros(shape);
        for v in &mut t.data {
            *v = rng.random_range(-bound..=bound);
        }
        t
    }

    pub fn standard_normal(shape: impl Into<Vec<usize>>, rng: &mut SeededRng) -> Self {
        let mut t = Tensor::zeros(shape);
        for v in &mut t.data {
            *v = crate::rng::standard_normal(rng);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (&i, &e) in index.iter().zip(&self.shape) {
            assert!(i < e, "index {index:?} out of bounds for {:?}", self.shape);
            off = off * e + i;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        if n != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn into_reshaped(mut self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        if n != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn flatten(&self) -> Tensor {
        Tensor {
            shape: vec![self.data.len()],
            data: self.data.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Index of the first maximum in row-major order.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn ensure_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.ensure_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn elementwise(&self, op: ElementwiseOp, rhs: Operand<'_>) -> Result<Tensor> {
        match rhs {
            Operand::Tensor(b) => match op {
                ElementwiseOp::Add => self.add(b),
                ElementwiseOp::Sub => self.sub(b),
                ElementwiseOp::Mul => self.mul(b),
                ElementwiseOp::Scale => Err(Error::dim("scale takes a scalar operand")),
            },
            Operand::Scalar(s) => Ok(match op {
                ElementwiseOp::Add => self.map(|v| v + s),
                ElementwiseOp::Sub => self.map(|v| v - s),
                ElementwiseOp::Mul | ElementwiseOp::Scale => self.scale(s),
            }),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// `self += alpha * other`, in place.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.ensure_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.ensure_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        matmul(self, other)
    }

    /// Rows `[start, end)` of the leading axis.
    pub fn slice_leading(&self, start: usize, end: usize) -> Result<Tensor> {
        if end <= start || end > self.shape[0] {
            return Err(Error::dim(format!(
                "slice {start}..{end} out of range for leading extent {}",
                self.shape[0]
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor {
            shape,
            data: self.data[start * inner..end * inner].to_vec(),
        })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::dim("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.ensure_same_shape(t, "stack")?;
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    /// Splits along the leading axis; inverse of [`Tensor::stack`].
    pub fn unstack(&self) -> Vec<Tensor> {
        let inner_shape: Vec<usize> = if self.rank() == 1 {
            vec![1]
        } else {
            self.shape[1..].to_vec()
        };
        let inner: usize = inner_shape.iter().product();
        self.data
            .chunks(inner)
            .map(|c| Tensor {
                shape: inner_shape.clone(),
                data: c.to_vec(),
            })
            .collect()
    }

    /// Concatenates rank-1 tensors.
    pub fn concat(parts: &[&Tensor]) -> Tensor {
        let data: Vec<f64> = parts.iter().flat_map(|t| t.data.iter().copied()).collect();
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Scale,
}

#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::dim(format!(
            "matmul: cannot multiply {:?} by {:?}",
            a.shape, b.shape
        )));
    }
    let (m, n, p) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for k in 0..n {
            let aik = a.data[i * n + k];
            let brow = &b.data[k * p..(k + 1) * p];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Tensor::new(vec![m, p], out)
}

/// `W·x + b`.
pub fn affine(w: &Tensor, x: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.rank() != 2
        || x.rank() != 1
        || b.rank() != 1
        || w.shape[1] != x.shape[0]
        || w.shape[0] != b.shape[0]
    {
        return Err(Error::dim(format!(
            "affine: W {:?}, x {:?}, b {:?} do not conform",
            w.shape, x.shape, b.shape
        )));
    }
    let n = w.shape[1];
    let data = w
        .data
        .chunks_exact(n)
        .zip(&b.data)
        .map(|(row, &bi)| dot(row, &x.data) + bi)
        .collect();
    Ok(Tensor {
        shape: vec![w.shape[0]],
        data,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds a border of `pad` zeros around each channel of a `[C,H,W]` tensor.
pub fn zero_pad2d(t: &Tensor, pad: usize) -> Result<Tensor> {
    if t.rank() != 3 {
        return Err(Error::dim(format!(
            "zero_pad2d expects [C,H,W], got {:?}",
            t.shape
        )));
    }
    if pad == 0 {
        return Ok(t.clone());
    }
    let (c, h, w) = (t.shape[0], t.shape[1], t.shape[2]);
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; c * ph * pw];
    for ch in 0..c {
        for y in 0..h {
            let src = &t.data[(ch * h + y) * w..(ch * h + y + 1) * w];
            let dst_start = (ch * ph + y + pad) * pw + pad;
            out[dst_start..dst_start + w].copy_from_slice(src);
        }
    }
    Tensor::new(vec![c, ph, pw], out)
}

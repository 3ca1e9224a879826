use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

fn default_rotation() -> f64 {
    15.0
}

fn default_translation() -> usize {
    4
}

fn default_probability() -> f64 {
    0.5
}

/// Random rotation and translation bounds. The generator comes from the
/// caller (the `augment` stream during training).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    #[serde(default = "default_rotation")]
    pub max_rotation_deg: f64,
    #[serde(default = "default_translation")]
    pub max_translation: usize,
    /// Chance that an example is transformed at all.
    #[serde(default = "default_probability")]
    pub probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_rotation_deg: default_rotation(),
            max_translation: default_translation(),
            probability: default_probability(),
        }
    }
}

/// One drawn transform, applicable to an image and its label map alike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub applied: bool,
    pub angle_deg: f64,
    pub dy: i64,
    pub dx: i64,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg.is_finite()) {
            return Err(Error::config(format!(
                "max rotation {} must be finite and non-negative",
                self.max_rotation_deg
            )));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::config(format!(
                "augmentation probability {} outside [0, 1]",
                self.probability
            )));
        }
        Ok(())
    }

    /// Always consumes the same number of draws, whether or not the
    /// transform ends up applied.
    pub fn sample(&self, rng: &mut SeededRng) -> Transform {
        let applied = rng.random::<f64>() < self.probability;
        let angle_deg = (2.0 * rng.random::<f64>() - 1.0) * self.max_rotation_deg;
        let t = self.max_translation as i64;
        let dy = rng.random_range(-t..=t);
        let dx = rng.random_range(-t..=t);
        Transform {
            applied,
            angle_deg,
            dy,
            dx,
        }
    }
}

impl Transform {
    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        if !self.applied {
            return Ok(image.clone());
        }
        translate(&rotate_nearest(image, self.angle_deg)?, self.dy, self.dx)
    }
}

fn chw(image: &Tensor) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::dim(format!(
            "augmentation expects [C,H,W], got {:?}",
            image.shape()
        ))),
    }
}

/// Rotates every channel about the image center by `degrees`, sampling the
/// nearest source pixel. Pixels whose source falls outside the image
/// become 0.
pub fn rotate_nearest(image: &Tensor, degrees: f64) -> Result<Tensor> {
    let (c, h, w) = chw(image)?;
    if degrees == 0.0 {
        return Ok(image.clone());
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Tensor::zeros(image.shape().to_vec());
    let src = image.data();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (ox, oy) = (x as f64 - cx, y as f64 - cy);
            let sx = (cos * ox + sin * oy + cx).round();
            let sy = (-sin * ox + cos * oy + cy).round();
            if sx < 0.0 || sy < 0.0 || sx >= w as f64 || sy >= h as f64 {
                continue;
            }
            let (sx, sy) = (sx as usize, sy as usize);
            for ch in 0..c {
                dst[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
            }
        }
    }
    Ok(out)
}

/// Shifts every channel by `(dy, dx)` pixels with zero fill.
pub fn translate(image: &Tensor, dy: i64, dx: i64) -> Result<Tensor> {
    let (c, h, w) = chw(image)?;
    let mut out = Tensor::zeros(image.shape().to_vec());
    let src = image.data();
    let dst = out.data_mut();
    for y in 0..h as i64 {
        let sy = y - dy;
        if sy < 0 || sy >= h as i64 {
            continue;
        }
        for x in 0..w as i64 {
            let sx = x - dx;
            if sx < 0 || sx >= w as i64 {
                continue;
            }
            for ch in 0..c {
                dst[(ch * h + y as usize) * w + x as usize] =
                    src[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    Ok(out)
}

/// Draws a transform from `cfg` and applies it.
pub fn augment(image: &Tensor, cfg: &AugmentConfig, rng: &mut SeededRng) -> Result<Tensor> {
    cfg.sample(rng).apply(image)
}

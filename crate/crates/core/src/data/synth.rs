//! Synthetic datasets. Every generator is a pure function of its arguments;
//! randomness comes from the `generator` stream of the seed.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Dataset, Example, Task};
use crate::error::{Error, Result};
use crate::rng::{standard_normal, stream_rng, SeededRng};
use crate::tensor::Tensor;

/// Glyph classes of [`synth_tools`], in target order.
pub const GLYPH_CLASSES: [&str; 7] = [
    "square", "disc", "triangle", "plus", "ring", "bar", "diamond",
];

/// RGB of each glyph class: the seven non-black corners of the color cube.
const GLYPH_COLORS: [[f64; 3]; 7] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
];

/// Label-map classes of [`synth_segmentation`].
pub const SEGMENT_CLASSES: [&str; 3] = ["background", "rectangle", "disc"];

const TOOL_SIDE: usize = 64;
const SEG_SIDE: usize = 32;

fn require_count(count: usize) -> Result<()> {
    if count == 0 {
        Err(Error::config("generator count must be at least 1"))
    } else {
        Ok(())
    }
}

/// Two isotropic unit-variance Gaussian blobs centred at `(−2, −2)` (target
/// 0) and `(2, 2)` (target 1). Labels alternate so the classes are balanced.
pub fn two_blobs(count: usize, seed: u64) -> Result<Dataset> {
    require_count(count)?;
    let mut rng = stream_rng(seed, "generator");
    let examples = (0..count)
        .map(|i| {
            let label = (i % 2) as f64;
            let centre = 4.0 * label - 2.0;
            let x = centre + standard_normal(&mut rng);
            let y = centre + standard_normal(&mut rng);
            Example {
                input: Tensor::vector(&[x, y]),
                target: Tensor::vector(&[label]),
            }
        })
        .collect();
    Dataset::new(
        Task::Binary,
        examples,
        format!("two_blobs(count={count}, seed={seed})"),
    )
}

/// Equal-weight mixture of isotropic 2-D Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub means: Vec<[f64; 2]>,
    pub std: f64,
}

impl MixtureSpec {
    /// Two components at `(1, 1)` and `(3, 2)` with spread 0.3.
    pub fn two_component() -> Self {
        MixtureSpec {
            means: vec![[1.0, 1.0], [3.0, 2.0]],
            std: 0.3,
        }
    }

    pub fn mean(&self) -> [f64; 2] {
        let n = self.means.len() as f64;
        [
            self.means.iter().map(|m| m[0]).sum::<f64>() / n,
            self.means.iter().map(|m| m[1]).sum::<f64>() / n,
        ]
    }
}

/// Samples from the mixture. Targets one-hot encode the component.
pub fn gaussian_mixture_2d(spec: &MixtureSpec, count: usize, seed: u64) -> Result<Dataset> {
    require_count(count)?;
    if spec.means.is_empty() || spec.std.is_nan() || spec.std <= 0.0 {
        return Err(Error::config(
            "mixture needs at least one component and a positive spread",
        ));
    }
    let mut rng = stream_rng(seed, "generator");
    let k = spec.means.len();
    let examples = (0..count)
        .map(|_| {
            let c = rng.random_range(0..k);
            let m = spec.means[c];
            let x = m[0] + spec.std * standard_normal(&mut rng);
            let y = m[1] + spec.std * standard_normal(&mut rng);
            let mut target = Tensor::zeros(vec![k]);
            target.data_mut()[c] = 1.0;
            Example {
                input: Tensor::vector(&[x, y]),
                target,
            }
        })
        .collect();
    Dataset::new(
        Task::Multiclass,
        examples,
        format!("gaussian_mixture_2d(k={k}, count={count}, seed={seed})"),
    )
}

/// Random bit sequences `[len, 1]` with per-step running-parity targets
/// `[len, 1]`; the last step holds the parity of the whole sequence.
pub fn parity_sequences(count: usize, len: usize, seed: u64) -> Result<Dataset> {
    require_count(count)?;
    if len == 0 {
        return Err(Error::config("sequence length must be at least 1"));
    }
    let mut rng = stream_rng(seed, "generator");
    let examples = (0..count)
        .map(|_| {
            let bits: Vec<f64> = (0..len).map(|_| f64::from(rng.random::<bool>())).collect();
            let mut acc = 0.0;
            let parity: Vec<f64> = bits
                .iter()
                .map(|&b| {
                    acc = (acc + b) % 2.0;
                    acc
                })
                .collect();
            Example {
                input: Tensor::new(vec![len, 1], bits).expect("consistent"),
                target: Tensor::new(vec![len, 1], parity).expect("consistent"),
            }
        })
        .collect();
    Dataset::new(
        Task::Sequence,
        examples,
        format!("parity(len={len}, count={count}, seed={seed})"),
    )
}

/// Four 1×8×8 binary shape classes (square outline, plus, horizontal bar,
/// vertical bar) at random offsets.
pub fn shapes_8x8(count: usize, seed: u64) -> Result<Dataset> {
    require_count(count)?;
    let mut rng = stream_rng(seed, "generator");
    let examples = (0..count)
        .map(|i| {
            let class = i % 4;
            let mut img = Tensor::zeros(vec![1, 8, 8]);
            let (oy, ox) = (rng.random_range(0..=3), rng.random_range(0..=3));
            for y in 0..5 {
                for x in 0..5 {
                    let on = match class {
                        0 => y == 0 || y == 4 || x == 0 || x == 4,
                        1 => y == 2 || x == 2,
                        2 => y == 2,
                        _ => x == 2,
                    };
                    if on {
                        img.set(&[0, oy + y, ox + x], 1.0);
                    }
                }
            }
            let mut target = Tensor::zeros(vec![4]);
            target.data_mut()[class] = 1.0;
            Example { input: img, target }
        })
        .collect();
    Dataset::new(
        Task::Multiclass,
        examples,
        format!("shapes_8x8(count={count}, seed={seed})"),
    )
}

/// Whether offset `(dy, dx)` from a glyph centre lies inside glyph `class`
/// of half-size `r`. `flip` mirrors orientation-dependent glyphs.
fn glyph_contains(class: usize, dy: f64, dx: f64, r: f64, flip: bool) -> bool {
    let d2 = dy * dy + dx * dx;
    match class {
        0 => dy.abs() <= r && dx.abs() <= r,
        1 => d2 <= r * r,
        2 => {
            let dy = if flip { -dy } else { dy };
            dy.abs() <= r && dx.abs() <= (dy + r) / 2.0
        }
        3 => (dx.abs() <= r / 3.0 && dy.abs() <= r) || (dy.abs() <= r / 3.0 && dx.abs() <= r),
        4 => d2 <= r * r && d2 >= 0.4 * r * r,
        5 => {
            let (a, b) = if flip { (dx, dy) } else { (dy, dx) };
            a.abs() <= r / 3.0 && b.abs() <= r
        }
        _ => dy.abs() + dx.abs() <= r,
    }
}

fn textured_background(rng: &mut SeededRng, channels: usize, side: usize) -> Tensor {
    let mut img = Tensor::zeros(vec![channels, side, side]);
    let fy = rng.random_range(0.1..0.4);
    let fx = rng.random_range(0.1..0.4);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    for c in 0..channels {
        let base = rng.random_range(0.1..0.25);
        for y in 0..side {
            for x in 0..side {
                let wave = 0.05 * (fy * y as f64 + fx * x as f64 + phase + c as f64).sin();
                let noise = rng.random_range(-0.04..0.04);
                img.set(&[c, y, x], base + wave + noise);
            }
        }
    }
    img
}

/// 3×64×64 scenes holding 0–3 glyphs of distinct classes on textured
/// backgrounds, with 7-way presence targets. Each glyph occupies its own
/// quadrant so none is ever occluded.
pub fn synth_tools(count: usize, seed: u64) -> Result<Dataset> {
    require_count(count)?;
    let mut rng = stream_rng(seed, "generator");
    let cell = TOOL_SIDE / 2;
    let examples = (0..count)
        .map(|_| {
            let mut img = textured_background(&mut rng, 3, TOOL_SIDE);
            let mut target = Tensor::zeros(vec![GLYPH_CLASSES.len()]);
            let n = rng.random_range(0..=3);
            let mut classes: Vec<usize> = (0..GLYPH_CLASSES.len()).collect();
            classes.shuffle(&mut rng);
            let mut cells = [0usize, 1, 2, 3];
            cells.shuffle(&mut rng);
            for (&class, &quadrant) in classes.iter().zip(&cells).take(n) {
                target.data_mut()[class] = 1.0;
                let r = rng.random_range(6..=11) as f64;
                let flip = rng.random::<bool>();
                let lo = r as usize;
                let cy = (quadrant / 2) * cell + rng.random_range(lo..cell - lo);
                let cx = (quadrant % 2) * cell + rng.random_range(lo..cell - lo);
                let shade = rng.random_range(0.8..1.0);
                for y in cy - lo..=cy + lo {
                    for x in cx - lo..=cx + lo {
                        if glyph_contains(
                            class,
                            y as f64 - cy as f64,
                            x as f64 - cx as f64,
                            r,
                            flip,
                        ) {
                            for (c, &on) in GLYPH_COLORS[class].iter().enumerate() {
                                img.set(&[c, y, x], if on > 0.0 { shade } else { 0.05 });
                            }
                        }
                    }
                }
            }
            Example { input: img, target }
        })
        .collect();
    Dataset::new(
        Task::Multilabel,
        examples,
        format!("synth_tools(count={count}, seed={seed})"),
    )
}

/// One shape of a segmentation scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum SegShape {
    Rect {
        y0: usize,
        x0: usize,
        h: usize,
        w: usize,
    },
    Disc {
        cy: f64,
        cx: f64,
        r: f64,
    },
}

impl SegShape {
    fn class(&self) -> usize {
        match self {
            SegShape::Rect { .. } => 1,
            SegShape::Disc { .. } => 2,
        }
    }

    fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            SegShape::Rect { y0, x0, h, w } => {
                (y0..y0 + h).contains(&y) && (x0..x0 + w).contains(&x)
            }
            SegShape::Disc { cy, cx, r } => {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                dy * dy + dx * dx <= r * r
            }
        }
    }
}

/// Paints shapes in order (later shapes cover earlier ones) and returns the
/// class index of every pixel.
pub(crate) fn paint_labels(shapes: &[SegShape], side: usize) -> Vec<usize> {
    let mut labels = vec![0; side * side];
    for s in shapes {
        for y in 0..side {
            for x in 0..side {
                if s.contains(y, x) {
                    labels[y * side + x] = s.class();
                }
            }
        }
    }
    labels
}

fn random_shape(rng: &mut SeededRng) -> SegShape {
    if rng.random::<bool>() {
        let h = rng.random_range(6..=14);
        let w = rng.random_range(6..=14);
        SegShape::Rect {
            y0: rng.random_range(0..=SEG_SIDE - h),
            x0: rng.random_range(0..=SEG_SIDE - w),
            h,
            w,
        }
    } else {
        let r = rng.random_range(3.0..7.0);
        SegShape::Disc {
            cy: rng.random_range(r..SEG_SIDE as f64 - r),
            cx: rng.random_range(r..SEG_SIDE as f64 - r),
            r,
        }
    }
}

/// 1×32×32 scenes of 0–3 overlapping rectangles and discs with exact
/// one-hot `[3, 32, 32]` label maps. Intensity levels differ per class
/// (0.1, 0.5, 0.9) under a shared texture.
pub fn synth_segmentation(count: usize, seed: u64) -> Result<Dataset> {
    require_count(count)?;
    let mut rng = stream_rng(seed, "generator");
    const LEVELS: [f64; 3] = [0.1, 0.5, 0.9];
    let examples = (0..count)
        .map(|_| {
            let n = rng.random_range(0..=3);
            let shapes: Vec<SegShape> = (0..n).map(|_| random_shape(&mut rng)).collect();
            let labels = paint_labels(&shapes, SEG_SIDE);
            let texture = textured_background(&mut rng, 1, SEG_SIDE);
            let mut img = Tensor::zeros(vec![1, SEG_SIDE, SEG_SIDE]);
            let mut target = Tensor::zeros(vec![SEGMENT_CLASSES.len(), SEG_SIDE, SEG_SIDE]);
            let plane = SEG_SIDE * SEG_SIDE;
            for (p, &k) in labels.iter().enumerate() {
                // The texture's own base level (≈0.1–0.25) is removed so class
                // levels stay separated.
                img.data_mut()[p] = LEVELS[k] + (texture.data()[p] - 0.175) * 0.5;
                target.data_mut()[k * plane + p] = 1.0;
            }
            Example { input: img, target }
        })
        .collect();
    Dataset::new(
        Task::PerPixel,
        examples,
        format!("synth_segmentation(count={count}, seed={seed})"),
    )
}

//! Label-preserving image transforms that carry lesion boxes along.
//!
//! Images are square and planar (`channels x n x n`). A quarter turn is
//! clockwise: output pixel `(y, x)` reads input pixel `(n - 1 - x, y)`, so a
//! box `(x0, y0, x1, y1)` becomes `(n - 1 - y1, x0, n - 1 - y0, x1)`.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::BoundingBox;
use crate::backbone::ImageBatch;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Rotate,
    Flip,
    ColorJitter,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Augmentation {
    pub ops: BTreeSet<AugmentOp>,
    /// Rotate by a uniform angle in [-15, 15] degrees instead of a random
    /// multiple of 90.
    pub continuous_rotation: bool,
}

impl Augmentation {
    pub fn is_identity(&self) -> bool {
        self.ops.is_empty()
    }
}

pub const MAX_ROTATION_DEGREES: f64 = 15.0;
pub const JITTER: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    /// `k` clockwise quarter turns.
    Quarter(u8),
    FlipHorizontal,
    FlipVertical,
    /// Clockwise rotation in degrees about the image centre.
    Rotate(f64),
    Jitter { brightness: f64, contrast: f64 },
}

pub fn sample_transforms<R: Rng + ?Sized>(aug: &Augmentation, rng: &mut R) -> Vec<Transform> {
    let mut out = Vec::new();
    if aug.ops.contains(&AugmentOp::Rotate) {
        if aug.continuous_rotation {
            out.push(Transform::Rotate(rng.gen_range(-MAX_ROTATION_DEGREES..=MAX_ROTATION_DEGREES)));
        } else {
            out.push(Transform::Quarter(rng.gen_range(0..4)));
        }
    }
    if aug.ops.contains(&AugmentOp::Flip) {
        if rng.gen_bool(0.5) {
            out.push(Transform::FlipHorizontal);
        }
        if rng.gen_bool(0.5) {
            out.push(Transform::FlipVertical);
        }
    }
    if aug.ops.contains(&AugmentOp::ColorJitter) {
        out.push(Transform::Jitter {
            brightness: rng.gen_range(1.0 - JITTER..=1.0 + JITTER),
            contrast: rng.gen_range(1.0 - JITTER..=1.0 + JITTER),
        });
    }
    out
}

fn remap(pixels: &[f64], c: usize, n: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Vec<f64> {
    let plane = n * n;
    let mut out = vec![0.0; pixels.len()];
    for ch in 0..c {
        for y in 0..n {
            for x in 0..n {
                let (sy, sx) = src(y, x);
                out[ch * plane + y * n + x] = pixels[ch * plane + sy * n + sx];
            }
        }
    }
    out
}

fn rotate_continuous(pixels: &[f64], c: usize, n: usize, degrees: f64) -> Vec<f64> {
    let (s, co) = degrees.to_radians().sin_cos();
    let mid = (n as f64 - 1.0) / 2.0;
    let plane = n * n;
    let last = n as f64 - 1.0;
    let mut out = vec![0.0; pixels.len()];
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 - mid, y as f64 - mid);
            // inverse of the clockwise rotation (image y points down)
            let sx = (co * px + s * py + mid).clamp(0.0, last);
            let sy = (-s * px + co * py + mid).clamp(0.0, last);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(n - 1), (y0 + 1).min(n - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for ch in 0..c {
                let p = &pixels[ch * plane..(ch + 1) * plane];
                let top = p[y0 * n + x0] * (1.0 - fx) + p[y0 * n + x1] * fx;
                let bottom = p[y1 * n + x0] * (1.0 - fx) + p[y1 * n + x1] * fx;
                out[ch * plane + y * n + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

fn rotate_box_continuous(b: &BoundingBox, n: usize, degrees: f64) -> BoundingBox {
    let (s, co) = degrees.to_radians().sin_cos();
    let mid = (n as f64 - 1.0) / 2.0;
    let corners = [
        (b.x_min as f64 - 0.5, b.y_min as f64 - 0.5),
        (b.x_max as f64 + 0.5, b.y_min as f64 - 0.5),
        (b.x_min as f64 - 0.5, b.y_max as f64 + 0.5),
        (b.x_max as f64 + 0.5, b.y_max as f64 + 0.5),
    ];
    let (mut lx, mut ly, mut hx, mut hy) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in corners {
        let (px, py) = (x - mid, y - mid);
        let (rx, ry) = (co * px - s * py + mid, s * px + co * py + mid);
        lx = lx.min(rx);
        ly = ly.min(ry);
        hx = hx.max(rx);
        hy = hy.max(ry);
    }
    let last = n as f64 - 1.0;
    let lo = |v: f64| (v + 0.5).floor().clamp(0.0, last) as usize;
    let hi = |v: f64| (v - 0.5).ceil().clamp(0.0, last) as usize;
    BoundingBox {
        x_min: lo(lx),
        y_min: lo(ly),
        x_max: hi(hx).max(lo(lx)),
        y_max: hi(hy).max(lo(ly)),
    }
}

fn transform_box(t: Transform, b: &BoundingBox, n: usize) -> BoundingBox {
    let m = n - 1;
    match t {
        Transform::Quarter(k) => (0..k % 4).fold(*b, |b, _| BoundingBox {
            x_min: m - b.y_max,
            y_min: b.x_min,
            x_max: m - b.y_min,
            y_max: b.x_max,
        }),
        Transform::FlipHorizontal => BoundingBox {
            x_min: m - b.x_max,
            x_max: m - b.x_min,
            ..*b
        },
        Transform::FlipVertical => BoundingBox {
            y_min: m - b.y_max,
            y_max: m - b.y_min,
            ..*b
        },
        Transform::Rotate(deg) => rotate_box_continuous(b, n, deg),
        Transform::Jitter { .. } => *b,
    }
}

/// Applies one transform to a planar square image and its boxes.
pub fn apply(t: Transform, pixels: &[f64], c: usize, n: usize, boxes: &[BoundingBox]) -> (Vec<f64>, Vec<BoundingBox>) {
    let m = n - 1;
    let out = match t {
        Transform::Quarter(k) => (0..k % 4).fold(pixels.to_vec(), |p, _| remap(&p, c, n, |y, x| (m - x, y))),
        Transform::FlipHorizontal => remap(pixels, c, n, |y, x| (y, m - x)),
        Transform::FlipVertical => remap(pixels, c, n, |y, x| (m - y, x)),
        Transform::Rotate(deg) => rotate_continuous(pixels, c, n, deg),
        Transform::Jitter { brightness, contrast } => {
            let plane = n * n;
            let mut out = pixels.to_vec();
            for ch in out.chunks_exact_mut(plane) {
                let mean = ch.iter().sum::<f64>() / plane as f64;
                for v in ch.iter_mut() {
                    *v = (((*v - mean) * contrast + mean) * brightness).clamp(0.0, 1.0);
                }
            }
            out
        }
    };
    (out, boxes.iter().map(|b| transform_box(t, b, n)).collect())
}

pub fn augment_sample<R: Rng + ?Sized>(
    pixels: &[f64],
    c: usize,
    n: usize,
    boxes: &[BoundingBox],
    aug: &Augmentation,
    rng: &mut R,
) -> (Vec<f64>, Vec<BoundingBox>) {
    sample_transforms(aug, rng)
        .into_iter()
        .fold((pixels.to_vec(), boxes.to_vec()), |(p, b), t| apply(t, &p, c, n, &b))
}

/// Augments every image of a square batch in order with the same rng.
pub fn augment<R: Rng + ?Sized>(
    batch: &ImageBatch,
    boxes: &[Vec<BoundingBox>],
    aug: &Augmentation,
    rng: &mut R,
) -> Result<(ImageBatch, Vec<Vec<BoundingBox>>)> {
    let (h, w) = batch.shape();
    if h != w {
        return crate::error::arg_err(format!("augmentation needs square images, got {h}x{w}"));
    }
    if boxes.len() != batch.len() {
        return crate::error::arg_err(format!("{} box lists for a batch of {}", boxes.len(), batch.len()));
    }
    let mut pixels = Vec::with_capacity(batch.pixels().len());
    let mut out_boxes = Vec::with_capacity(batch.len());
    for (i, b) in boxes.iter().enumerate() {
        let (p, nb) = augment_sample(batch.image(i), batch.channels(), h, b, aug, rng);
        pixels.extend(p);
        out_boxes.push(nb);
    }
    Ok((batch.with_pixels(pixels)?, out_boxes))
}

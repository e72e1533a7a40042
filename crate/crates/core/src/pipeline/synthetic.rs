use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Sample};
use crate::annotations::{AnnotationRecord, BoundingBox};
use crate::bbox::box_blur;
use crate::error::{config_err, Result};
use crate::grid::Grid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClass {
    pub name: String,
    pub train_count: usize,
    pub test_count: usize,
    /// Minority classes carry a localized patch with a recorded box.
    pub minority: bool,
}

impl SyntheticClass {
    pub fn new(name: &str, train_count: usize, test_count: usize, minority: bool) -> Self {
        Self {
            name: name.to_string(),
            train_count,
            test_count,
            minority,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub classes: Vec<SyntheticClass>,
    pub image_size: usize,
    /// Inclusive range of patch radii in pixels.
    pub patch_radius: (usize, usize),
    /// Intensity offset of the patch over its background.
    pub patch_contrast: f64,
    /// Standard deviation of the correlated background texture.
    pub texture_amplitude: f64,
    /// Standard deviation of the independent per-pixel noise.
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: vec![
                SyntheticClass::new("smooth", 2000, 400, false),
                SyntheticClass::new("grainy", 1500, 300, false),
                SyntheticClass::new("lesion", 60, 100, true),
            ],
            image_size: 64,
            patch_radius: (5, 8),
            patch_contrast: 0.4,
            texture_amplitude: 0.12,
            pixel_noise: 0.04,
            seed: 0,
        }
    }
}

/// Correlation radius of the background texture of the `j`-th majority class.
const TEXTURE_RADII: [usize; 5] = [5, 1, 3, 8, 2];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
    pub train_boxes: Vec<AnnotationRecord>,
    pub test_boxes: Vec<AnnotationRecord>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let majority = self.classes.iter().filter(|c| !c.minority).count();
        if self.classes.len() < 2 || majority == 0 {
            return config_err("synthetic data needs at least two classes, one of them a majority class");
        }
        let (lo, hi) = self.patch_radius;
        if lo == 0 || lo > hi {
            return config_err(format!("invalid patch radius range {lo}..={hi}"));
        }
        if 2 * hi + 1 > self.image_size {
            return config_err(format!(
                "patch of diameter {} does not fit a {}x{} image",
                2 * hi + 1,
                self.image_size,
                self.image_size
            ));
        }
        if self.image_size == 0 {
            return config_err("image size must be positive");
        }
        Ok(())
    }

    fn majority_classes(&self) -> Vec<usize> {
        (0..self.classes.len()).filter(|&c| !self.classes[c].minority).collect()
    }
}

/// Pixel membership of the patch shape: a disc for even minority ordinals, a
/// square for odd ones, both with a dark core of half the radius.
pub fn patch_profile(shape: usize, radius: usize, dy: i64, dx: i64) -> Option<f64> {
    let r = radius as i64;
    let inner = (radius as f64 / 2.0).round() as i64;
    let (inside, core) = if shape % 2 == 0 {
        (dy * dy + dx * dx <= r * r, dy * dy + dx * dx <= inner * inner)
    } else {
        (dy.abs() <= r && dx.abs() <= r, dy.abs() <= inner && dx.abs() <= inner)
    };
    inside.then_some(if core { -0.6 } else { 1.0 })
}

fn texture(rng: &mut ChaCha8Rng, n: usize, radius: usize) -> Vec<f64> {
    let white = Grid::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let smooth = box_blur(&white, radius);
    let mean = smooth.iter().sum::<f64>() / smooth.len() as f64;
    let var = smooth.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / smooth.len() as f64;
    let sd = var.sqrt().max(1e-12);
    smooth.iter().map(|v| (v - mean) / sd).collect()
}

/// Renders one image; returns bytes and, for minority classes, the patch box.
fn render(spec: &SyntheticSpec, class: usize, rng: &mut ChaCha8Rng) -> (Vec<u8>, Option<BoundingBox>) {
    let n = spec.image_size;
    let majority = spec.majority_classes();
    let background = if spec.classes[class].minority {
        majority[rng.gen_range(0..majority.len())]
    } else {
        class
    };
    let ordinal = majority.iter().position(|&c| c == background).unwrap_or(0);
    let tex = texture(rng, n, TEXTURE_RADII[ordinal % TEXTURE_RADII.len()]);
    let mut img: Vec<f64> = tex
        .iter()
        .map(|t| 0.5 + spec.texture_amplitude * t + spec.pixel_noise * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut gt = None;
    if spec.classes[class].minority {
        let shape = (0..class).filter(|&c| spec.classes[c].minority).count();
        let r = rng.gen_range(spec.patch_radius.0..=spec.patch_radius.1);
        let cy = rng.gen_range(r..n - r) as i64;
        let cx = rng.gen_range(r..n - r) as i64;
        let ri = r as i64;
        let mut b: Option<BoundingBox> = None;
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if let Some(p) = patch_profile(shape, r, dy, dx) {
                    let (y, x) = ((cy + dy) as usize, (cx + dx) as usize);
                    img[y * n + x] += spec.patch_contrast * p;
                    let bb = b.get_or_insert(BoundingBox {
                        x_min: x,
                        y_min: y,
                        x_max: x,
                        y_max: y,
                    });
                    bb.x_min = bb.x_min.min(x);
                    bb.x_max = bb.x_max.max(x);
                    bb.y_min = bb.y_min.min(y);
                    bb.y_max = bb.y_max.max(y);
                }
            }
        }
        gt = b;
    }
    let bytes = img.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    (bytes, gt)
}

/// Seeded imbalanced dataset: majority classes differ in background texture
/// scale, minority images are a majority-style background plus one patch.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let names: Vec<String> = spec.classes.iter().map(|c| c.name.clone()).collect();
    let mut out = Vec::new();
    for (split_id, split) in ["train", "test"].into_iter().enumerate() {
        let mut ds = Dataset::new(names.clone(), 1, spec.image_size);
        let mut boxes = Vec::new();
        for (c, class) in spec.classes.iter().enumerate() {
            let count = if split_id == 0 { class.train_count } else { class.test_count };
            let rendered = crate::par::map_indices(count, |i| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(((split_id as u64) << 48) | ((c as u64) << 32) | i as u64);
                render(spec, c, &mut rng)
            });
            for (i, (pixels, gt)) in rendered.into_iter().enumerate() {
                let id = format!("{split}_{}_{i:05}", class.name);
                if let Some(b) = gt {
                    boxes.push(AnnotationRecord {
                        image_id: id.clone(),
                        class_label: c,
                        boxes: vec![b],
                    });
                }
                ds.samples.push(Sample {
                    id,
                    label: c,
                    pixels,
                    source_shape: (spec.image_size, spec.image_size),
                });
            }
        }
        out.push((ds, boxes));
    }
    let (test, test_boxes) = out.pop().expect("two splits");
    let (train, train_boxes) = out.pop().expect("two splits");
    Ok(SyntheticData {
        train,
        test,
        train_boxes,
        test_boxes,
    })
}

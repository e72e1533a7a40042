//! Heatmap overlays of class activation maps.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use image::{DynamicImage, Rgb, RgbImage};

use super::argmax;
use super::plot::Canvas;
use crate::annotations::BoundingBox;
use crate::backbone::{Backbone, ImageBatch};
use crate::cam::{normalize_and_resize, raw_cam_single, sigma_from_gradient, CamOptions};
use crate::error::{CareError, Result};
use crate::grid::Grid;
use crate::pipeline::to_planar;

pub const OVERLAY_ALPHA: f64 = 0.5;
const BOX_COLOUR: Rgb<u8> = Rgb([0, 255, 0]);

/// Jet colour map of `v` in [0, 1].
pub fn jet(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let channel = |offset: f64| ((1.5 - (4.0 * v - offset).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [channel(3.0), channel(2.0), channel(1.0)]
}

/// Alpha-blends the jet colouring of `map` over `image` and outlines `boxes`.
pub fn overlay(image: &RgbImage, map: &Grid<f64>, boxes: &[BoundingBox]) -> Result<RgbImage> {
    let (w, h) = image.dimensions();
    if map.shape() != (h as usize, w as usize) {
        return Err(CareError::Argument(format!("map {:?} does not match image {h}x{w}", map.shape())));
    }
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let heat = jet(map.at(y as usize, x as usize));
        for c in 0..3 {
            let blended = (1.0 - OVERLAY_ALPHA) * f64::from(px.0[c]) + OVERLAY_ALPHA * f64::from(heat[c]);
            px.0[c] = blended.round() as u8;
        }
    }
    let mut cv = Canvas { img: out };
    for b in boxes {
        cv.rect_outline(b.x_min as i64, b.y_min as i64, b.x_max as i64, b.y_max as i64, BOX_COLOUR);
    }
    Ok(cv.img)
}

/// Grad-CAM of the predicted class at the image's own resolution, with the
/// predicted class index.
pub fn predicted_class_map(backbone: &Backbone, image: &DynamicImage) -> Result<(usize, Grid<f64>)> {
    let c = backbone.config();
    let pixels: Vec<f64> = to_planar(image, c.input_channels, c.input_size)?
        .iter()
        .map(|&p| f64::from(p) / 255.0)
        .collect();
    let batch = ImageBatch::new(pixels, c.input_channels, c.input_size, c.input_size, vec![0], c.num_classes)?;
    let out = backbone.forward(&batch)?;
    let class = argmax(&out.logits[0]);
    let f = &out.features;
    let sigma = sigma_from_gradient(&out.sample_score_gradient(0, class)?, f.channels);
    let raw = raw_cam_single(f.sample(0), f.height, f.width, &sigma, CamOptions::default())?;
    let map = normalize_and_resize(&raw, (image.height() as usize, image.width() as usize));
    Ok((class, map.values))
}

/// Writes `<out_dir>/<id>_cam.png` for every image, with boxes (in image
/// coordinates) drawn where given. Returns the written paths.
pub fn viz(
    backbone: &Backbone,
    images: &[(String, DynamicImage)],
    boxes: &HashMap<String, Vec<BoundingBox>>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(images.len());
    for (id, img) in images {
        let (_, map) = predicted_class_map(backbone, img)?;
        let drawn = overlay(&img.to_rgb8(), &map, boxes.get(id).map(Vec::as_slice).unwrap_or(&[]))?;
        let path = out_dir.join(format!("{id}_cam.png"));
        drawn.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// PNG files of `dir` (recursively one level into subdirectories), sorted,
/// keyed by file stem.
pub fn load_images(dir: &Path) -> Result<Vec<(String, DynamicImage)>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            for e in std::fs::read_dir(&p)? {
                paths.push(e?.path());
            }
        } else {
            paths.push(p);
        }
    }
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((id, image::open(&p)?))
        })
        .collect()
}

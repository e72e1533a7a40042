//! Browser demo over the `care` crate.
//!
//! Three operations on a synthetic 64x64 image:
//! * auto-box the lesion from a stub saliency map,
//! * Grad-CAM overlay of a baseline and an attention-finetuned model,
//! * attention loss of either model's map against the current box.
//!
//! [`Session`] holds the logic and is usable natively; [`Demo`] wraps it for
//! JavaScript. Images cross the boundary as RGBA bytes, row-major.

use care::annotations::{build_masks, BoundingBox};
use care::backbone::{Backbone, Checkpoint, ImageBatch};
use care::bbox::{boxes_from_map, stub_saliency, BoxGenParams};
use care::cam::{cam_for_true_class, CamOptions};
use care::eval::{argmax, overlay};
use care::grid::Grid;
use care::losses::{attention_terms, softmax, LossConfig};
use care::pipeline::{generate_synthetic, SyntheticClass, SyntheticSpec};
use care::{CareError, Result};
use image::RgbImage;
use wasm_bindgen::prelude::*;

const BASELINE: &str = include_str!("../assets/baseline.json");
const ATTENTION: &str = include_str!("../assets/care.json");

pub const SIZE: usize = 64;
/// Display names of the synthetic classes, in generation order.
pub const CLASSES: [&str; 3] = ["smooth", "grainy", "lesion"];

fn load(json: &str) -> Result<(Backbone, Vec<String>)> {
    let ckpt: Checkpoint = serde_json::from_str(json)?;
    let names = ckpt.class_names.clone();
    Ok((ckpt.into_backbone()?, names))
}

struct Model {
    net: Backbone,
    /// Model output index of each entry of [`CLASSES`].
    index: Vec<usize>,
}

impl Model {
    fn new(json: &str) -> Result<Self> {
        let (net, names) = load(json)?;
        let index = CLASSES
            .iter()
            .map(|c| names.iter().position(|n| n == c).ok_or_else(|| CareError::Checkpoint(format!("model lacks class {c}"))))
            .collect::<Result<_>>()?;
        Ok(Self { net, index })
    }
}

pub struct Session {
    image: Grid<f64>,
    label: usize,
    lesion_box: Option<BoundingBox>,
    current: Option<BoundingBox>,
    baseline: Model,
    attention: Model,
}

/// Outcome of [`Session::explain`].
#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    pub rgba: Vec<u8>,
    /// Class probabilities in [`CLASSES`] order.
    pub probabilities: Vec<f64>,
    /// Index into [`CLASSES`] of the class whose map is shown.
    pub class: usize,
    /// Inner, outer and combined attention loss against the current box.
    pub attention: Option<[f64; 3]>,
}

impl Session {
    pub fn new() -> Result<Self> {
        let mut s = Self {
            image: Grid::filled(SIZE, SIZE, 0.0),
            label: 0,
            lesion_box: None,
            current: None,
            baseline: Model::new(BASELINE)?,
            attention: Model::new(ATTENTION)?,
        };
        s.sample(0, 2)?;
        Ok(s)
    }

    /// Draws a fresh image of class `class` (index into [`CLASSES`]).
    pub fn sample(&mut self, seed: u64, class: usize) -> Result<Vec<u8>> {
        if class >= CLASSES.len() {
            return Err(CareError::Argument(format!("class {class} out of range")));
        }
        let spec = SyntheticSpec {
            classes: CLASSES
                .iter()
                .enumerate()
                .map(|(i, n)| SyntheticClass::new(n, 0, usize::from(i == class), i == 2))
                .collect(),
            seed,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec)?;
        let s = &data.test.samples[0];
        self.image = Grid::from_vec(SIZE, SIZE, s.pixels.iter().map(|&p| f64::from(p) / 255.0).collect())?;
        self.label = class;
        self.lesion_box = data.test_boxes.first().map(|r| r.boxes[0]);
        self.current = None;
        Ok(self.render(&Grid::filled(SIZE, SIZE, 0.0), false))
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn lesion_box(&self) -> Option<BoundingBox> {
        self.lesion_box
    }

    pub fn current_box(&self) -> Option<BoundingBox> {
        self.current
    }

    pub fn set_box(&mut self, x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<()> {
        let b = BoundingBox::new(x_min, y_min, x_max, y_max)?;
        if !b.fits((SIZE, SIZE)) {
            return Err(CareError::Argument(format!("box {b:?} leaves the {SIZE}x{SIZE} image")));
        }
        self.current = Some(b);
        Ok(())
    }

    /// Stub saliency, thresholded and boxed; the box becomes current.
    pub fn auto_box(&mut self, threshold: f64, min_area_fraction: f64) -> Result<Vec<u8>> {
        let params = BoxGenParams {
            threshold,
            min_area_fraction,
            ..BoxGenParams::default()
        };
        params.validate()?;
        let map = stub_saliency(&self.image);
        let boxes = boxes_from_map(&map, &params)?;
        self.current = boxes.first().copied();
        Ok(self.render(&map.values, true))
    }

    /// Grad-CAM of `class` (the image's own class when `None`) under the
    /// baseline or the attention-finetuned model.
    pub fn explain(&self, finetuned: bool, class: Option<usize>, tau: f64, lambda_out: f64) -> Result<Explanation> {
        let model = if finetuned { &self.attention } else { &self.baseline };
        let class = class.unwrap_or(self.label);
        if class >= CLASSES.len() {
            return Err(CareError::Argument(format!("class {class} out of range")));
        }
        let batch = ImageBatch::new(self.image.as_slice().to_vec(), 1, SIZE, SIZE, vec![model.index[class]], CLASSES.len())?;
        let out = model.net.forward(&batch)?;
        let p = softmax(&out.logits[0]);
        let probabilities: Vec<f64> = model.index.iter().map(|&i| p[i]).collect();
        let map = cam_for_true_class(&out, batch.labels(), (SIZE, SIZE), CamOptions::default())?.remove(0);
        let attention = match self.current {
            Some(b) => {
                let cfg = LossConfig {
                    tau,
                    lambda_out,
                    ..LossConfig::default()
                };
                cfg.validate(None)?;
                let t = attention_terms(&map, &build_masks(&[b], (SIZE, SIZE))?, &cfg)?;
                Some([t.inner, t.outer, t.attention])
            }
            None => None,
        };
        Ok(Explanation {
            rgba: self.render(&map.values, true),
            class,
            probabilities,
            attention,
        })
    }

    /// Index into [`CLASSES`] of the model's prediction.
    pub fn predict(&self, finetuned: bool) -> Result<usize> {
        Ok(argmax(&self.explain(finetuned, None, 0.5, 1.0)?.probabilities))
    }

    fn render(&self, heat: &Grid<f64>, with_box: bool) -> Vec<u8> {
        let grey = RgbImage::from_fn(SIZE as u32, SIZE as u32, |x, y| {
            let v = (self.image.at(y as usize, x as usize) * 255.0).round() as u8;
            image::Rgb([v, v, v])
        });
        let boxes: Vec<BoundingBox> = if with_box { self.current.into_iter().collect() } else { Vec::new() };
        let img = if heat.iter().all(|&v| v == 0.0) && !with_box {
            grey
        } else {
            overlay(&grey, heat, &boxes).expect("map matches image")
        };
        img.pixels().flat_map(|p| [p.0[0], p.0[1], p.0[2], 255]).collect()
    }
}

fn js(e: CareError) -> JsError {
    JsError::new(&e.to_string())
}

/// JavaScript handle on a [`Session`].
#[wasm_bindgen]
pub struct Demo {
    inner: Session,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> std::result::Result<Demo, JsError> {
        Ok(Self { inner: Session::new().map_err(js)? })
    }

    pub fn size() -> usize {
        SIZE
    }

    pub fn class_name(index: usize) -> String {
        CLASSES.get(index).map_or_else(String::new, |s| s.to_string())
    }

    pub fn label(&self) -> usize {
        self.inner.label()
    }

    pub fn sample(&mut self, seed: u32, class: usize) -> std::result::Result<Vec<u8>, JsError> {
        self.inner.sample(u64::from(seed), class).map_err(js)
    }

    /// `[x_min, y_min, x_max, y_max]`, empty when no box is set.
    pub fn current_box(&self) -> Vec<u32> {
        boxed(self.inner.current_box())
    }

    /// The generator's own box of the lesion, empty for majority images.
    pub fn lesion_box(&self) -> Vec<u32> {
        boxed(self.inner.lesion_box())
    }

    pub fn set_box(&mut self, x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> std::result::Result<(), JsError> {
        self.inner.set_box(x_min, y_min, x_max, y_max).map_err(js)
    }

    pub fn auto_box(&mut self, threshold: f64, min_area_fraction: f64) -> std::result::Result<Vec<u8>, JsError> {
        self.inner.auto_box(threshold, min_area_fraction).map_err(js)
    }

    /// Overlay RGBA; read the numbers back with the accessors of the result.
    pub fn explain(&self, finetuned: bool, class: i32, tau: f64, lambda_out: f64) -> std::result::Result<ExplainResult, JsError> {
        let class = usize::try_from(class).ok();
        let e = self.inner.explain(finetuned, class, tau, lambda_out).map_err(js)?;
        Ok(ExplainResult(e))
    }
}

fn boxed(b: Option<BoundingBox>) -> Vec<u32> {
    b.map(|b| vec![b.x_min as u32, b.y_min as u32, b.x_max as u32, b.y_max as u32]).unwrap_or_default()
}

#[wasm_bindgen]
pub struct ExplainResult(Explanation);

#[wasm_bindgen]
impl ExplainResult {
    pub fn rgba(&self) -> Vec<u8> {
        self.0.rgba.clone()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.0.probabilities.clone()
    }

    pub fn class(&self) -> usize {
        self.0.class
    }

    /// `[inner, outer, attention]`, empty without a box.
    pub fn attention(&self) -> Vec<f64> {
        self.0.attention.map(|a| a.to_vec()).unwrap_or_default()
    }
}

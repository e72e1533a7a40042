//! Lesion bounding boxes, inside/outside masks and the box CSV format.
//!
//! The CSV holds one row per box, `image_id,class_label,x_min,y_min,x_max,y_max`,
//! with inclusive pixel coordinates in the coordinate frame of the dataset
//! images. A header row is optional. Rows sharing an `image_id` form one
//! [`AnnotationRecord`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, CareError, Result};
use crate::grid::Grid;

pub const CSV_HEADER: [&str; 6] = ["image_id", "class_label", "x_min", "y_min", "x_max", "y_max"];

/// Inclusive pixel box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BoundingBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        if x_min > x_max || y_min > y_max {
            return arg_err(format!("empty box ({x_min},{y_min},{x_max},{y_max})"));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    /// The whole `(H, W)` image.
    pub fn full(shape: (usize, usize)) -> Self {
        Self {
            x_min: 0,
            y_min: 0,
            x_max: shape.1.saturating_sub(1),
            y_max: shape.0.saturating_sub(1),
        }
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        self.x_min <= other.x_min && self.y_min <= other.y_min && self.x_max >= other.x_max && self.y_max >= other.y_max
    }

    pub fn fits(&self, shape: (usize, usize)) -> bool {
        self.x_min <= self.x_max && self.y_min <= self.y_max && self.x_max < shape.1 && self.y_max < shape.0
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> usize {
        let x0 = self.x_min.max(other.x_min);
        let y0 = self.y_min.max(other.y_min);
        let x1 = self.x_max.min(other.x_max);
        let y1 = self.y_max.min(other.y_max);
        if x0 > x1 || y0 > y1 {
            0
        } else {
            (x1 - x0 + 1) * (y1 - y0 + 1)
        }
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        inter as f64 / (self.area() + other.area() - inter) as f64
    }
}

/// Binary inside (`m_in`) and outside (`m_out`) masks of a box union.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair {
    pub m_in: Grid<u8>,
    pub m_out: Grid<u8>,
}

impl MaskPair {
    pub fn shape(&self) -> (usize, usize) {
        self.m_in.shape()
    }

    pub fn inside_count(&self) -> usize {
        self.m_in.iter().filter(|&&v| v == 1).count()
    }

    pub fn outside_count(&self) -> usize {
        self.m_out.iter().filter(|&&v| v == 1).count()
    }
}

/// `m_in` is 1 on the union of the boxes, `m_out` its complement.
pub fn build_masks(boxes: &[BoundingBox], shape: (usize, usize)) -> Result<MaskPair> {
    if boxes.is_empty() {
        return arg_err("cannot build masks from an empty box list");
    }
    let (h, w) = shape;
    let mut m_in = Grid::filled(h, w, 0u8);
    for b in boxes {
        if !b.fits(shape) {
            return arg_err(format!("box {b:?} does not fit a {h}x{w} image"));
        }
        for y in b.y_min..=b.y_max {
            m_in.as_mut_slice()[y * w + b.x_min..=y * w + b.x_max].fill(1);
        }
    }
    let m_out = m_in.map(|&v| 1 - v);
    Ok(MaskPair { m_in, m_out })
}

fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Scales a box about its centre by `factor`, rounding the new edges half-up
/// and clamping to the `(H, W)` image. Factor 1 is the identity. If clamping
/// leaves nothing, the 1-pixel box at the centre is returned.
pub fn scale_box(b: &BoundingBox, factor: f64, shape: (usize, usize)) -> Result<BoundingBox> {
    if !(factor > 0.0) || !factor.is_finite() {
        return arg_err(format!("box scale factor must be positive, got {factor}"));
    }
    let (h, w) = shape;
    let axis = |lo: usize, hi: usize, limit: usize| -> (usize, usize) {
        let centre = (lo + hi) as f64 / 2.0;
        let half = (hi - lo) as f64 / 2.0 * factor;
        let max = limit as i64 - 1;
        let a = round_half_up(centre - half).clamp(0, max);
        let b = round_half_up(centre + half).clamp(0, max);
        if a > b {
            let c = round_half_up(centre).clamp(0, max) as usize;
            (c, c)
        } else {
            (a as usize, b as usize)
        }
    };
    let (x_min, x_max) = axis(b.x_min, b.x_max, w);
    let (y_min, y_max) = axis(b.y_min, b.y_max, h);
    Ok(BoundingBox { x_min, y_min, x_max, y_max })
}

/// Boxes of one image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub class_label: usize,
    pub boxes: Vec<BoundingBox>,
}

/// Maps box coordinates from a `from = (H, W)` image to a `to = (H, W)`
/// resize of it. Lower edges floor, upper edges cover the last source pixel.
pub fn rescale_boxes(record: &AnnotationRecord, from: (usize, usize), to: (usize, usize)) -> Result<AnnotationRecord> {
    if from.0 == 0 || from.1 == 0 || to.0 == 0 || to.1 == 0 {
        return arg_err("rescale shapes must be non-empty");
    }
    let sy = to.0 as f64 / from.0 as f64;
    let sx = to.1 as f64 / from.1 as f64;
    let map = |lo: usize, hi: usize, s: f64, limit: usize| -> (usize, usize) {
        let a = ((lo as f64 * s).floor() as usize).min(limit - 1);
        let b = ((((hi + 1) as f64 * s).ceil() as usize).saturating_sub(1)).min(limit - 1);
        (a, b.max(a))
    };
    let boxes = record
        .boxes
        .iter()
        .map(|b| {
            if !b.fits(from) {
                return Err(CareError::Annotation {
                    image_id: record.image_id.clone(),
                    message: format!("box {b:?} outside {}x{} source image", from.0, from.1),
                });
            }
            let (x_min, x_max) = map(b.x_min, b.x_max, sx, to.1);
            let (y_min, y_max) = map(b.y_min, b.y_max, sy, to.0);
            Ok(BoundingBox { x_min, y_min, x_max, y_max })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnnotationRecord {
        image_id: record.image_id.clone(),
        class_label: record.class_label,
        boxes,
    })
}

/// Parses box CSV text. When `shape` is given every box must fit it.
pub fn parse_annotations<R: Read>(reader: R, source: &str, shape: Option<(usize, usize)>) -> Result<Vec<AnnotationRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut records: Vec<AnnotationRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map_or(n as u64 + 1, |p| p.line()) as usize;
        let parse_err = |message: String| CareError::Parse {
            path: source.to_string(),
            line,
            message,
        };
        if row.iter().all(|f| f.is_empty()) {
            continue;
        }
        if n == 0 && row.get(0) == Some("image_id") {
            continue;
        }
        if row.len() != 6 {
            return Err(parse_err(format!("expected 6 fields, found {}", row.len())));
        }
        let num = |i: usize| -> Result<usize> {
            row[i]
                .parse::<usize>()
                .map_err(|_| parse_err(format!("field `{}` is not a non-negative integer: `{}`", CSV_HEADER[i], &row[i])))
        };
        let image_id = row[0].to_string();
        if image_id.is_empty() {
            return Err(parse_err("empty image_id".into()));
        }
        let class_label = num(1)?;
        let (x_min, y_min, x_max, y_max) = (num(2)?, num(3)?, num(4)?, num(5)?);
        let b = BoundingBox::new(x_min, y_min, x_max, y_max).map_err(|e| parse_err(e.to_string()))?;
        if let Some(s) = shape {
            if !b.fits(s) {
                return Err(CareError::Annotation {
                    image_id,
                    message: format!("box {b:?} outside {}x{} image (line {line})", s.0, s.1),
                });
            }
        }
        match index.get(&image_id) {
            Some(&i) => {
                if records[i].class_label != class_label {
                    return Err(parse_err(format!(
                        "image `{image_id}` listed with classes {} and {class_label}",
                        records[i].class_label
                    )));
                }
                records[i].boxes.push(b);
            }
            None => {
                index.insert(image_id.clone(), records.len());
                records.push(AnnotationRecord {
                    image_id,
                    class_label,
                    boxes: vec![b],
                });
            }
        }
    }
    Ok(records)
}

pub fn load_annotations(path: &Path, shape: Option<(usize, usize)>) -> Result<Vec<AnnotationRecord>> {
    let file = File::open(path)?;
    parse_annotations(file, &path.display().to_string(), shape)
}

pub fn write_annotations_to<W: Write>(writer: W, records: &[AnnotationRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CSV_HEADER)?;
    for r in records {
        for b in &r.boxes {
            wtr.write_record(&[
                r.image_id.clone(),
                r.class_label.to_string(),
                b.x_min.to_string(),
                b.y_min.to_string(),
                b.x_max.to_string(),
                b.y_max.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_annotations_to(File::create(path)?, records)
}

//! Probability map to lesion box post-processing.
//!
//! A saliency or segmentation probability map is binarized (`value >=
//! threshold` is foreground), split into connected components with a
//! two-pass union-find labeling, small components are dropped, and the tight
//! box of the largest (or every) surviving component is returned.

mod saliency;

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

pub use saliency::{box_blur, stub_saliency};

use crate::annotations::{AnnotationRecord, BoundingBox};
use crate::error::{arg_err, Result};
use crate::grid::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSource {
    Saliency,
    Segmentation,
    Stub,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    pub values: Grid<f64>,
    pub source: MapSource,
}

impl ProbabilityMap {
    pub fn new(values: Grid<f64>, source: MapSource) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return arg_err(format!("probability {v} outside [0, 1]"));
        }
        Ok(Self { values, source })
    }

    /// 8-bit grayscale image, probability = value / 255.
    pub fn from_luma8(img: &image::GrayImage, source: MapSource) -> Self {
        let (w, h) = img.dimensions();
        let values = Grid::from_fn(h as usize, w as usize, |y, x| f64::from(img.get_pixel(x as u32, y as u32).0[0]) / 255.0);
        Self { values, source }
    }

    pub fn load(path: &Path, source: MapSource) -> Result<Self> {
        Ok(Self::from_luma8(&image::open(path)?.to_luma8(), source))
    }
}

/// Foreground iff `value >= threshold`.
pub fn binarize(map: &ProbabilityMap, threshold: f64) -> Grid<bool> {
    map.values.map(|&v| v >= threshold)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn from_neighbours(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Self::Four),
            8 => Ok(Self::Eight),
            _ => arg_err(format!("connectivity must be 4 or 8, got {n}")),
        }
    }
}

/// Labels `1..=K` in raster order of first appearance, 0 for background.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentLabeling {
    pub labels: Grid<u32>,
    /// `areas[k - 1]` is the pixel count of label `k`.
    pub areas: Vec<usize>,
}

impl ComponentLabeling {
    pub fn num_components(&self) -> usize {
        self.areas.len()
    }

    /// Tight box of each component, index `k - 1` for label `k`.
    pub fn component_boxes(&self) -> Vec<BoundingBox> {
        let mut boxes: Vec<Option<BoundingBox>> = vec![None; self.areas.len()];
        let (h, w) = self.labels.shape();
        for y in 0..h {
            for x in 0..w {
                let l = self.labels.at(y, x) as usize;
                if l == 0 {
                    continue;
                }
                let b = boxes[l - 1].get_or_insert(BoundingBox {
                    x_min: x,
                    y_min: y,
                    x_max: x,
                    y_max: y,
                });
                b.x_min = b.x_min.min(x);
                b.x_max = b.x_max.max(x);
                b.y_min = b.y_min.min(y);
                b.y_max = b.y_max.max(y);
            }
        }
        boxes.into_iter().map(|b| b.expect("every label has a pixel")).collect()
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let root = ra.min(rb);
        self.parent[ra.max(rb) as usize] = root;
        root
    }
}

/// Two-pass union-find connected-component labeling.
pub fn label_components(binary: &Grid<bool>, connectivity: Connectivity) -> ComponentLabeling {
    let (h, w) = binary.shape();
    let mut provisional = vec![u32::MAX; h * w];
    let mut sets = DisjointSet { parent: Vec::new() };
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(0, -1), (-1, 0)],
        Connectivity::Eight => &[(0, -1), (-1, -1), (-1, 0), (-1, 1)],
    };
    for y in 0..h {
        for x in 0..w {
            if !binary.at(y, x) {
                continue;
            }
            let mut label: Option<u32> = None;
            for &(dy, dx) in offsets {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || nx >= w as isize {
                    continue;
                }
                let n = provisional[ny as usize * w + nx as usize];
                if n == u32::MAX {
                    continue;
                }
                label = Some(match label {
                    None => n,
                    Some(l) => sets.union(l, n),
                });
            }
            provisional[y * w + x] = label.unwrap_or_else(|| sets.make());
        }
    }
    let mut relabel = vec![0u32; sets.parent.len()];
    let mut areas = Vec::new();
    let mut labels = vec![0u32; h * w];
    for (out, &p) in labels.iter_mut().zip(&provisional) {
        if p == u32::MAX {
            continue;
        }
        let root = sets.find(p) as usize;
        if relabel[root] == 0 {
            areas.push(0);
            relabel[root] = areas.len() as u32;
        }
        *out = relabel[root];
        areas[relabel[root] as usize - 1] += 1;
    }
    ComponentLabeling {
        labels: Grid::from_vec(h, w, labels).expect("label grid size"),
        areas,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keep {
    #[default]
    Largest,
    All,
}

/// Tight boxes of components with `area >= min_area_fraction * H * W`.
/// `Keep::Largest` returns at most one box (ties go to the lower label).
pub fn extract_boxes(labeling: &ComponentLabeling, min_area_fraction: f64, keep: Keep) -> Result<Vec<BoundingBox>> {
    if !(0.0..1.0).contains(&min_area_fraction) {
        return arg_err(format!("min_area_fraction must lie in [0, 1), got {min_area_fraction}"));
    }
    let min_area = min_area_fraction * labeling.labels.len() as f64;
    let boxes = labeling.component_boxes();
    let survivors: Vec<(usize, BoundingBox)> = labeling
        .areas
        .iter()
        .zip(boxes)
        .filter(|(&a, _)| a as f64 >= min_area)
        .map(|(&a, b)| (a, b))
        .collect();
    Ok(match keep {
        Keep::All => survivors.into_iter().map(|(_, b)| b).collect(),
        Keep::Largest => survivors
            .into_iter()
            .fold(None::<(usize, BoundingBox)>, |best, (a, b)| match best {
                Some((ba, _)) if ba >= a => best,
                _ => Some((a, b)),
            })
            .map(|(_, b)| b)
            .into_iter()
            .collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxGenParams {
    pub threshold: f64,
    pub min_area_fraction: f64,
    pub keep: Keep,
    pub connectivity: Connectivity,
}

impl Default for BoxGenParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_area_fraction: 0.01,
            keep: Keep::Largest,
            connectivity: Connectivity::Eight,
        }
    }
}

impl BoxGenParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return arg_err(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if !(0.0..1.0).contains(&self.min_area_fraction) {
            return arg_err(format!("min_area_fraction must lie in [0, 1), got {}", self.min_area_fraction));
        }
        Ok(())
    }
}

/// Full post-processing of one map; may be empty.
pub fn boxes_from_map(map: &ProbabilityMap, params: &BoxGenParams) -> Result<Vec<BoundingBox>> {
    params.validate()?;
    let labeling = label_components(&binarize(map, params.threshold), params.connectivity);
    extract_boxes(&labeling, params.min_area_fraction, params.keep)
}

/// Boxes for every PNG map in `dir` (image id = file stem), falling back to
/// the whole image when nothing survives filtering.
pub fn boxes_from_dir(dir: &Path, params: &BoxGenParams, class_label: usize, source: MapSource) -> Result<Vec<AnnotationRecord>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let map = ProbabilityMap::load(p, source)?;
            let image_id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let mut boxes = boxes_from_map(&map, params)?;
            if boxes.is_empty() {
                warn!("{image_id}: no component survived filtering, using the whole image");
                boxes.push(BoundingBox::full(map.values.shape()));
            }
            Ok(AnnotationRecord {
                image_id,
                class_label,
                boxes,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;

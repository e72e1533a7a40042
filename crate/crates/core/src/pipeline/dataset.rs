use std::collections::HashMap;
use std::path::Path;

use image::imageops::FilterType;
use image::DynamicImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::ImageBatch;
use crate::error::{config_err, Result};

/// One image, planar `channels x size x size` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub pixels: Vec<u8>,
    /// `(H, W)` of the file the sample was read from, for box rescaling.
    pub source_shape: (usize, usize),
}

/// An in-memory labelled image set with square images of a common size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub channels: usize,
    pub size: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(class_names: Vec<String>, channels: usize, size: usize) -> Self {
        Self {
            class_names,
            channels,
            size,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn index_by_id(&self) -> HashMap<&str, usize> {
        self.samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect()
    }

    /// Class with the fewest samples (lowest index on ties).
    pub fn smallest_class(&self) -> usize {
        let counts = self.class_counts();
        (0..counts.len()).min_by_key(|&c| (counts[c], c)).unwrap_or(0)
    }

    pub fn pixels_f64(&self, index: usize) -> Vec<f64> {
        self.samples[index].pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<ImageBatch> {
        let mut pixels = Vec::with_capacity(indices.len() * self.channels * self.size * self.size);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend(self.samples[i].pixels.iter().map(|&p| f64::from(p) / 255.0));
            labels.push(self.samples[i].label);
        }
        ImageBatch::new(pixels, self.channels, self.size, self.size, labels, self.num_classes())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            class_names: self.class_names.clone(),
            channels: self.channels,
            size: self.size,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Reads `dir/<class_name>/*.png`; class names are the sorted
    /// subdirectory names. Images are converted to `channels` (inferred from
    /// the first file when `None`) and resized to `size` (the first file's
    /// height when `None`).
    pub fn load_dir(dir: &Path, channels: Option<usize>, size: Option<usize>) -> Result<Dataset> {
        let mut class_dirs: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        class_dirs.sort();
        if class_dirs.is_empty() {
            return config_err(format!("{} has no class subdirectories", dir.display()));
        }
        let mut files = Vec::new();
        for (label, cd) in class_dirs.iter().enumerate() {
            let mut pngs: Vec<_> = std::fs::read_dir(cd)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
                .collect();
            pngs.sort();
            files.extend(pngs.into_iter().map(|p| (label, p)));
        }
        let class_names = class_dirs
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect();
        let mut out: Option<Dataset> = None;
        for (label, path) in files {
            let img = image::open(&path)?;
            let ds = out.get_or_insert_with(|| {
                let ch = channels.unwrap_or(if img.color().has_color() { 3 } else { 1 });
                Dataset::new(Vec::clone(&class_names), ch, size.unwrap_or(img.height() as usize))
            });
            let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            ds.samples.push(Sample {
                id,
                label,
                source_shape: (img.height() as usize, img.width() as usize),
                pixels: to_planar(&img, ds.channels, ds.size)?,
            });
        }
        match out {
            Some(ds) => Ok(ds),
            None => Ok(Dataset::new(class_names, channels.unwrap_or(1), size.unwrap_or(0))),
        }
    }

    /// Writes `dir/<class_name>/<id>.png`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        for name in &self.class_names {
            std::fs::create_dir_all(dir.join(name))?;
        }
        for s in &self.samples {
            let path = dir.join(&self.class_names[s.label]).join(format!("{}.png", s.id));
            self.to_image(s).save(path)?;
        }
        Ok(())
    }

    pub fn to_image(&self, s: &Sample) -> DynamicImage {
        let n = self.size as u32;
        let plane = self.size * self.size;
        if self.channels == 1 {
            DynamicImage::ImageLuma8(image::GrayImage::from_raw(n, n, s.pixels.clone()).expect("plane size"))
        } else {
            let mut rgb = Vec::with_capacity(plane * 3);
            for p in 0..plane {
                for c in 0..3 {
                    rgb.push(s.pixels[c * plane + p]);
                }
            }
            DynamicImage::ImageRgb8(image::RgbImage::from_raw(n, n, rgb).expect("plane size"))
        }
    }
}

pub(crate) fn to_planar(img: &DynamicImage, channels: usize, size: usize) -> Result<Vec<u8>> {
    let n = size as u32;
    let img = if img.width() != n || img.height() != n {
        img.resize_exact(n, n, FilterType::Triangle)
    } else {
        img.clone()
    };
    match channels {
        1 => Ok(img.to_luma8().into_raw()),
        3 => {
            let rgb = img.to_rgb8();
            let plane = size * size;
            let mut out = vec![0u8; plane * 3];
            for (p, px) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    out[c * plane + p] = px.0[c];
                }
            }
            Ok(out)
        }
        _ => config_err(format!("unsupported channel count {channels}")),
    }
}

/// Stratified split: `ceil(fraction * n_c)` of each class (never all of a
/// class with more than one sample) goes to validation. Returns
/// `(train, val)` index lists, each sorted.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for c in 0..num_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let mut n_val = (fraction * idx.len() as f64).ceil() as usize;
        if fraction <= 0.0 {
            n_val = 0;
        } else if n_val >= idx.len() && idx.len() > 1 {
            n_val = idx.len() - 1;
        }
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

//! Gradient-weighted class activation maps.
//!
//! For class `c` the channel weights are the spatially averaged score
//! gradients `sigma_k = (1/Z) sum_ij dY^c/dA^k_ij`; the raw map is
//! `sum_k sigma_k A^k`, rectified by default, and the final
//! [`ActivationMap`] is that map bilinearly resampled to image resolution and
//! min-max normalized to `[0, 1]`.

mod resize;

pub use resize::bilinear_resize;
pub(crate) use resize::Resampler;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneOutput, FeatureMapStack};
use crate::error::{arg_err, Result};
use crate::grid::Grid;

/// Maps whose unnormalized range is below this are treated as constant.
pub const DEGENERATE_RANGE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CamOptions {
    /// Clamp the weighted channel sum at zero before normalizing.
    pub rectify: bool,
}

impl Default for CamOptions {
    fn default() -> Self {
        Self { rectify: true }
    }
}

/// `sigma` for every batch element.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelWeights {
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap {
    pub values: Grid<f64>,
    pub source_class: Option<usize>,
    /// `(min, max)` of the map before normalization.
    pub pre_norm_range: (f64, f64),
}

impl ActivationMap {
    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }
}

/// Spatial mean of each channel of a `d x u x v` gradient.
pub fn sigma_from_gradient(gradient: &[f64], d: usize) -> Vec<f64> {
    let z = gradient.len() / d;
    gradient
        .chunks_exact(z)
        .map(|plane| plane.iter().sum::<f64>() / z as f64)
        .collect()
}

pub fn channel_weights(output: &BackboneOutput<'_>, class_index: usize) -> Result<ChannelWeights> {
    let d = output.features.channels;
    let sigma = (0..output.batch_len())
        .map(|i| Ok(sigma_from_gradient(&output.sample_score_gradient(i, class_index)?, d)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelWeights { sigma })
}

fn weighted_sum(activations: &[f64], sigma: &[f64], z: usize) -> Vec<f64> {
    let mut out = vec![0.0; z];
    for (plane, &s) in activations.chunks_exact(z).zip(sigma) {
        for (o, a) in out.iter_mut().zip(plane) {
            *o += s * a;
        }
    }
    out
}

/// Weighted channel sum of one `d x u x v` activation tensor.
pub fn raw_cam_single(activations: &[f64], u: usize, v: usize, sigma: &[f64], opts: CamOptions) -> Result<Grid<f64>> {
    if u * v == 0 || activations.len() != sigma.len() * u * v {
        return arg_err(format!(
            "activations of length {} do not match {} channels of {u}x{v}",
            activations.len(),
            sigma.len()
        ));
    }
    let mut sum = weighted_sum(activations, sigma, u * v);
    if opts.rectify {
        sum.iter_mut().for_each(|x| *x = x.max(0.0));
    }
    Grid::from_vec(u, v, sum)
}

pub fn raw_cam(features: &FeatureMapStack, sigma: &ChannelWeights, opts: CamOptions) -> Result<Vec<Grid<f64>>> {
    if sigma.sigma.len() != features.batch {
        return arg_err(format!(
            "{} channel-weight vectors for a batch of {}",
            sigma.sigma.len(),
            features.batch
        ));
    }
    (0..features.batch)
        .map(|i| raw_cam_single(features.sample(i), features.height, features.width, &sigma.sigma[i], opts))
        .collect()
}

fn argmin_argmax(values: &[f64]) -> (usize, usize) {
    let (mut lo, mut hi) = (0, 0);
    for (i, &v) in values.iter().enumerate() {
        if v < values[lo] {
            lo = i;
        }
        if v > values[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

fn range_of(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Min-max normalizes `raw` and resamples it to `target = (H, W)`.
///
/// Normalization is taken after resampling so that a non-constant map spans
/// exactly `[0, 1]` (bilinear interpolation of a normalized map may miss its
/// extremes). Since min-max scaling commutes with the affine resampling this
/// equals normalize, resize, renormalize. A map whose range is below
/// [`DEGENERATE_RANGE`] becomes all zeros.
pub fn normalize_and_resize(raw: &Grid<f64>, target: (usize, usize)) -> ActivationMap {
    let pre = range_of(raw.as_slice());
    let (h, w) = target;
    if !(pre.1 - pre.0 >= DEGENERATE_RANGE) {
        return ActivationMap {
            values: Grid::filled(h, w, 0.0),
            source_class: None,
            pre_norm_range: pre,
        };
    }
    let mut resized = bilinear_resize(raw, target);
    let (lo, hi) = range_of(resized.as_slice());
    let span = hi - lo;
    if span < DEGENERATE_RANGE {
        resized.as_mut_slice().fill(0.0);
    } else {
        resized.as_mut_slice().iter_mut().for_each(|x| *x = ((*x - lo) / span).clamp(0.0, 1.0));
    }
    ActivationMap {
        values: resized,
        source_class: None,
        pre_norm_range: pre,
    }
}

/// Grad-CAM of each image's ground-truth class at `target` resolution.
pub fn cam_for_true_class(
    output: &BackboneOutput<'_>,
    labels: &[usize],
    target: (usize, usize),
    opts: CamOptions,
) -> Result<Vec<ActivationMap>> {
    if labels.len() != output.batch_len() {
        return arg_err(format!("{} labels for a batch of {}", labels.len(), output.batch_len()));
    }
    let f = &output.features;
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let sigma = sigma_from_gradient(&output.sample_score_gradient(i, c)?, f.channels);
            let raw = raw_cam_single(f.sample(i), f.height, f.width, &sigma, opts)?;
            let mut map = normalize_and_resize(&raw, target);
            map.source_class = Some(c);
            Ok(map)
        })
        .collect()
}

/// Differentiable Grad-CAM for one sample, given its channel weights.
pub(crate) struct CamTape {
    pub sigma: Vec<f64>,
    weighted: Vec<f64>,
    resampler: Resampler,
    /// Normalized map at image resolution.
    pub map: Vec<f64>,
    extrema: Option<(usize, usize, f64)>,
    rectify: bool,
}

impl CamTape {
    pub fn forward(
        features: &[f64],
        (u, v): (usize, usize),
        sigma: Vec<f64>,
        target: (usize, usize),
        opts: CamOptions,
    ) -> Self {
        let weighted = weighted_sum(features, &sigma, u * v);
        let rectified: Vec<f64> = if opts.rectify {
            weighted.iter().map(|x| x.max(0.0)).collect()
        } else {
            weighted.clone()
        };
        let resampler = Resampler::new((u, v), target);
        let (plo, phi) = range_of(&rectified);
        let mut map = resampler.apply(&rectified);
        let mut extrema = None;
        if phi - plo >= DEGENERATE_RANGE {
            let (imin, imax) = argmin_argmax(&map);
            let (lo, span) = (map[imin], map[imax] - map[imin]);
            if span >= DEGENERATE_RANGE {
                map.iter_mut().for_each(|x| *x = (*x - lo) / span);
                extrema = Some((imin, imax, span));
            }
        }
        if extrema.is_none() {
            map.fill(0.0);
        }
        Self {
            sigma,
            weighted,
            resampler,
            map,
            extrema,
            rectify: opts.rectify,
        }
    }

    /// Given `dL/dF`, returns `(dL/dsigma, dL/dA)` where the feature part is
    /// the direct dependence with `sigma` held fixed.
    pub fn backward(&self, features: &[f64], dmap: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let z = self.weighted.len();
        let d = self.sigma.len();
        let Some((imin, imax, span)) = self.extrema else {
            return (vec![0.0; d], vec![0.0; features.len()]);
        };
        // F = (S - S[imin]) / (S[imax] - S[imin])
        let mut ds: Vec<f64> = dmap.iter().map(|g| g / span).collect();
        let (mut to_min, mut to_max) = (0.0, 0.0);
        for (g, f) in dmap.iter().zip(&self.map) {
            to_min += g * (f - 1.0);
            to_max -= g * f;
        }
        ds[imin] += to_min / span;
        ds[imax] += to_max / span;
        let mut dr = self.resampler.apply_adjoint(&ds);
        if self.rectify {
            for (g, &x) in dr.iter_mut().zip(&self.weighted) {
                if x <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let mut dsigma = vec![0.0; d];
        let mut dfeat = vec![0.0; features.len()];
        for k in 0..d {
            let plane = &features[k * z..(k + 1) * z];
            dsigma[k] = plane.iter().zip(&dr).map(|(a, g)| a * g).sum();
            for (o, g) in dfeat[k * z..(k + 1) * z].iter_mut().zip(&dr) {
                *o = self.sigma[k] * g;
            }
        }
        (dsigma, dfeat)
    }
}

//! Training objectives.
//!
//! Classification terms (cross entropy, class-weighted cross entropy, focal
//! loss) and the attention terms computed on a normalized activation map `F`
//! against inside/outside masks:
//!
//! * inner: `-min(sum(M_in F) / sum(M_in), tau)`, in `[-tau, 0]`;
//! * outer: `sum(M_out F) / sum(M_out)`, in `[0, 1]` (0 when `M_out` is empty);
//! * attention: `inner + lambda * outer`, averaged over annotated images;
//! * total: `(1 - alpha) * classification + alpha * attention`, or the plain
//!   classification loss when no image of the batch carries boxes.
//!
//! [`care_objective`] evaluates the total loss of a backbone on a batch and
//! its exact parameter gradient, differentiating through the Grad-CAM
//! channel weights unless `detach_sigma` is set.

mod objective;

pub use objective::{care_objective, ObjectiveOutput};

use serde::{Deserialize, Serialize};

use crate::annotations::MaskPair;
use crate::cam::ActivationMap;
use crate::error::{arg_err, config_err, Result};
use crate::grid::Grid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub lambda_out: f64,
    pub tau: f64,
    /// Per-class weights for cost-sensitive cross entropy.
    pub class_weights: Option<Vec<f64>>,
    /// Focal loss exponent; plain (weighted) cross entropy when absent.
    pub focal_gamma: Option<f64>,
    /// Treat the Grad-CAM channel weights as constants when backpropagating
    /// the attention loss.
    pub detach_sigma: bool,
    /// Rectify the weighted channel sum of the activation map.
    pub rectify_cam: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda_out: 1.0,
            tau: 0.5,
            class_weights: None,
            focal_gamma: None,
            detach_sigma: false,
            rectify_cam: true,
        }
    }
}

/// Default focal exponent when focal loss is requested without one.
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;

impl LossConfig {
    pub fn validate(&self, num_classes: Option<usize>) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return config_err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.lambda_out >= 0.0) || !self.lambda_out.is_finite() {
            return config_err(format!("lambda_out must be >= 0, got {}", self.lambda_out));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return config_err(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if let Some(g) = self.focal_gamma {
            if !(g >= 0.0) || !g.is_finite() {
                return config_err(format!("focal gamma must be >= 0, got {g}"));
            }
        }
        if let Some(w) = &self.class_weights {
            check_weights(w)?;
            if let Some(c) = num_classes {
                if w.len() != c {
                    return config_err(format!("{} class weights for {c} classes", w.len()));
                }
            }
        }
        Ok(())
    }

    pub fn cam_options(&self) -> crate::cam::CamOptions {
        crate::cam::CamOptions { rectify: self.rectify_cam }
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    if let Some(x) = w.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
        return config_err(format!("class weights must be positive, got {x}"));
    }
    Ok(())
}

/// Per-term values of one loss evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    pub attention: f64,
    pub inner: f64,
    pub outer: f64,
    pub n_attended: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AttentionTerms {
    pub inner: f64,
    pub outer: f64,
    pub attention: f64,
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

fn check_logits(logits: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if logits.len() != labels.len() || logits.is_empty() {
        return arg_err(format!("{} logit rows for {} labels", logits.len(), labels.len()));
    }
    for (row, &y) in logits.iter().zip(labels) {
        if y >= row.len() {
            return arg_err(format!("label {y} outside [0, {})", row.len()));
        }
    }
    Ok(())
}

/// Mean negative log-likelihood of the true class.
pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    weighted_cross_entropy(logits, labels, None)
}

/// Class-weighted cross entropy `sum_i w_{y_i} l_i / sum_i w_{y_i}`; plain
/// mean cross entropy without weights.
pub fn weighted_cross_entropy(logits: &[Vec<f64>], labels: &[usize], class_weights: Option<&[f64]>) -> Result<f64> {
    classification_terms(logits, labels, class_weights, 0.0, false).map(|(v, _)| v)
}

/// Mean over samples of `(1 - p)^gamma * (-ln p)` with `p` the true-class
/// probability.
pub fn focal_loss(logits: &[Vec<f64>], labels: &[usize], gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return config_err(format!("focal gamma must be >= 0, got {gamma}"));
    }
    classification_terms(logits, labels, None, gamma, false).map(|(v, _)| v)
}

/// Inverse class frequency weights normalized to mean 1.
pub fn inverse_frequency_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() || counts.contains(&0) {
        return config_err("inverse-frequency weights need a positive count for every class");
    }
    let inv: Vec<f64> = counts.iter().map(|&n| 1.0 / n as f64).collect();
    let mean = inv.iter().sum::<f64>() / inv.len() as f64;
    Ok(inv.into_iter().map(|x| x / mean).collect())
}

/// The classification term selected by `cfg`.
pub fn classification_loss(logits: &[Vec<f64>], labels: &[usize], cfg: &LossConfig) -> Result<f64> {
    classification_terms(logits, labels, cfg.class_weights.as_deref(), cfg.focal_gamma.unwrap_or(0.0), false).map(|(v, _)| v)
}

/// Value and, when requested, per-sample logit gradients of the (weighted,
/// optionally focal) classification loss. `gamma = 0` is cross entropy.
pub(crate) fn classification_terms(
    logits: &[Vec<f64>],
    labels: &[usize],
    class_weights: Option<&[f64]>,
    gamma: f64,
    with_grad: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_logits(logits, labels)?;
    if let Some(w) = class_weights {
        check_weights(w)?;
        if let Some(row) = logits.first() {
            if w.len() != row.len() {
                return config_err(format!("{} class weights for {} classes", w.len(), row.len()));
            }
        }
    }
    let weight = |y: usize| class_weights.map_or(1.0, |w| w[y]);
    let norm: f64 = labels.iter().map(|&y| weight(y)).sum();
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(if with_grad { logits.len() } else { 0 });
    for (row, &y) in logits.iter().zip(labels) {
        let lsm = log_softmax(row);
        let logp = lsm[y];
        let p = logp.exp();
        let q = 1.0 - p;
        let w = weight(y) / norm;
        let modulator = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
        total += w * modulator * (-logp);
        if with_grad {
            // dFL/dz_j = c * (onehot_j - p_j) with
            // c = gamma (1-p)^(gamma-1) p ln p - (1-p)^gamma
            let c = if gamma == 0.0 {
                -1.0
            } else {
                let lead = if q > 0.0 { gamma * q.powf(gamma - 1.0) * p * logp } else { 0.0 };
                lead - modulator
            };
            let g = lsm
                .iter()
                .enumerate()
                .map(|(j, l)| w * c * (f64::from(u8::from(j == y)) - l.exp()))
                .collect();
            grads.push(g);
        }
    }
    Ok((total, grads))
}

fn check_mask(map: &Grid<f64>, mask: &Grid<u8>) -> Result<()> {
    if map.shape() != mask.shape() {
        return arg_err(format!("map shape {:?} does not match mask shape {:?}", map.shape(), mask.shape()));
    }
    Ok(())
}

/// Compensated (Neumaier) summation.
#[derive(Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub(crate) fn masked_mean(map: &[f64], mask: &[u8]) -> Option<f64> {
    let mut sum = CompensatedSum::default();
    let mut count = 0usize;
    for (f, &m) in map.iter().zip(mask) {
        if m != 0 {
            sum.add(f64::from(m) * f);
            count += m as usize;
        }
    }
    (count > 0).then(|| sum.value() / count as f64)
}

pub fn inner_loss(map: &ActivationMap, m_in: &Grid<u8>, tau: f64) -> Result<f64> {
    check_mask(&map.values, m_in)?;
    match masked_mean(map.values.as_slice(), m_in.as_slice()) {
        Some(mean) => Ok(-mean.min(tau)),
        None => arg_err("inner loss needs a non-empty inside mask"),
    }
}

pub fn outer_loss(map: &ActivationMap, m_out: &Grid<u8>) -> Result<f64> {
    check_mask(&map.values, m_out)?;
    Ok(masked_mean(map.values.as_slice(), m_out.as_slice()).unwrap_or(0.0))
}

/// Inner, outer and combined attention loss of one image.
pub fn attention_terms(map: &ActivationMap, masks: &MaskPair, cfg: &LossConfig) -> Result<AttentionTerms> {
    let inner = inner_loss(map, &masks.m_in, cfg.tau)?;
    let outer = outer_loss(map, &masks.m_out)?;
    Ok(AttentionTerms {
        inner,
        outer,
        attention: inner + cfg.lambda_out * outer,
    })
}

/// Attention terms averaged over the given annotated images.
pub fn attention_loss(maps: &[&ActivationMap], masks: &[&MaskPair], cfg: &LossConfig) -> Result<AttentionTerms> {
    if maps.len() != masks.len() || maps.is_empty() {
        return arg_err(format!("{} maps for {} mask pairs", maps.len(), masks.len()));
    }
    let mut acc = AttentionTerms::default();
    for (m, k) in maps.iter().zip(masks) {
        let t = attention_terms(m, k, cfg)?;
        acc.inner += t.inner;
        acc.outer += t.outer;
        acc.attention += t.attention;
    }
    let n = maps.len() as f64;
    Ok(AttentionTerms {
        inner: acc.inner / n,
        outer: acc.outer / n,
        attention: acc.attention / n,
    })
}

/// Combines the classification term with the attention terms of the images
/// that have masks. `cams[i]` is only read where `masks[i]` is present.
pub fn total_loss(
    logits: &[Vec<f64>],
    labels: &[usize],
    cams: &[ActivationMap],
    masks: &[Option<MaskPair>],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate(logits.first().map(Vec::len))?;
    if masks.len() != labels.len() || cams.len() != labels.len() {
        return arg_err(format!(
            "{} maps and {} mask entries for {} images",
            cams.len(),
            masks.len(),
            labels.len()
        ));
    }
    let ce = classification_loss(logits, labels, cfg)?;
    let (maps, pairs): (Vec<&ActivationMap>, Vec<&MaskPair>) =
        cams.iter().zip(masks).filter_map(|(c, m)| m.as_ref().map(|m| (c, m))).unzip();
    Ok(combine(ce, if maps.is_empty() { None } else { Some(attention_loss(&maps, &pairs, cfg)?) }, maps.len(), cfg))
}

pub(crate) fn combine(ce: f64, attention: Option<AttentionTerms>, n_attended: usize, cfg: &LossConfig) -> LossBreakdown {
    match attention {
        Some(a) if n_attended > 0 => LossBreakdown {
            total: (1.0 - cfg.alpha) * ce + cfg.alpha * a.attention,
            cross_entropy: ce,
            attention: a.attention,
            inner: a.inner,
            outer: a.outer,
            n_attended,
        },
        _ => LossBreakdown {
            total: ce,
            cross_entropy: ce,
            ..LossBreakdown::default()
        },
    }
}

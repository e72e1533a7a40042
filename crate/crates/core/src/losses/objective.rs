use super::{classification_terms, combine, masked_mean, AttentionTerms, LossBreakdown, LossConfig};
use crate::annotations::MaskPair;
use crate::backbone::{Backbone, Gradients, ImageBatch, SampleTrace};
use crate::cam::{sigma_from_gradient, CamTape};
use crate::error::{arg_err, Result};
use crate::par;

/// Loss values, logits and (optionally) the parameter gradient of one batch.
pub struct ObjectiveOutput {
    pub breakdown: LossBreakdown,
    pub logits: Vec<Vec<f64>>,
    pub gradients: Option<Gradients>,
}

struct Attended {
    tape: CamTape,
    terms: AttentionTerms,
    /// `dL_a / dF` for this image (before batch averaging and alpha).
    dmap: Vec<f64>,
}

fn attend(backbone: &Backbone, trace: &SampleTrace, label: usize, masks: &MaskPair, cfg: &LossConfig) -> Result<Attended> {
    let c = backbone.config();
    let fs = c.feature_size();
    let d = c.feature_channels();
    let sigma = sigma_from_gradient(&backbone.trace_score_gradient(trace, label), d);
    let tape = CamTape::forward(&trace.features, (fs, fs), sigma, (c.input_size, c.input_size), cfg.cam_options());
    let (n_in, n_out) = (masks.inside_count(), masks.outside_count());
    if n_in == 0 {
        return arg_err("inner loss needs a non-empty inside mask");
    }
    let mean_in = masked_mean(&tape.map, masks.m_in.as_slice()).unwrap_or(0.0);
    let outer = masked_mean(&tape.map, masks.m_out.as_slice()).unwrap_or(0.0);
    let inner = -mean_in.min(cfg.tau);
    // On the clipped branch (mean_in >= tau) the inner term is constant.
    let g_in = if mean_in < cfg.tau { -1.0 / n_in as f64 } else { 0.0 };
    let g_out = if n_out > 0 { cfg.lambda_out / n_out as f64 } else { 0.0 };
    let dmap = masks
        .m_in
        .as_slice()
        .iter()
        .zip(masks.m_out.as_slice())
        .map(|(&mi, &mo)| f64::from(mi) * g_in + f64::from(mo) * g_out)
        .collect();
    Ok(Attended {
        tape,
        terms: AttentionTerms {
            inner,
            outer,
            attention: inner + cfg.lambda_out * outer,
        },
        dmap,
    })
}

/// Total loss of `backbone` on `batch`, with `masks[i]` present for the
/// images that carry lesion boxes, and its exact gradient when `with_grad`.
///
/// The attention gradient flows both into the features directly and, unless
/// `cfg.detach_sigma`, through the Grad-CAM channel weights into the head
/// (a second-order term, since the weights are themselves gradients).
pub fn care_objective(
    backbone: &Backbone,
    batch: &ImageBatch,
    masks: &[Option<MaskPair>],
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<ObjectiveOutput> {
    let c = backbone.config();
    cfg.validate(Some(c.num_classes))?;
    if masks.len() != batch.len() {
        return arg_err(format!("{} mask entries for a batch of {}", masks.len(), batch.len()));
    }
    if batch.is_empty() {
        return arg_err("empty batch");
    }
    if batch.channels() != c.input_channels || batch.shape() != (c.input_size, c.input_size) {
        return Err(crate::CareError::Config(format!(
            "batch shape {}x{:?} does not match backbone input {}x{}",
            batch.channels(),
            batch.shape(),
            c.input_channels,
            c.input_size
        )));
    }
    for m in masks.iter().flatten() {
        if m.shape() != batch.shape() {
            return arg_err(format!("mask shape {:?} does not match image shape {:?}", m.shape(), batch.shape()));
        }
    }
    let labels = batch.labels();
    let traces = par::map_indices(batch.len(), |i| backbone.trace(batch.image(i)));
    let logits: Vec<Vec<f64>> = traces.iter().map(|t| t.logits.clone()).collect();
    let (ce, dlogits) = classification_terms(
        &logits,
        labels,
        cfg.class_weights.as_deref(),
        cfg.focal_gamma.unwrap_or(0.0),
        with_grad,
    )?;

    let attended = par::map_indices(batch.len(), |i| {
        masks[i].as_ref().map(|m| attend(backbone, &traces[i], labels[i], m, cfg)).transpose()
    })
    .into_iter()
    .collect::<Result<Vec<Option<Attended>>>>()?;

    let n_att = attended.iter().flatten().count();
    let mean_terms = (n_att > 0).then(|| {
        let mut acc = AttentionTerms::default();
        for a in attended.iter().flatten() {
            acc.inner += a.terms.inner;
            acc.outer += a.terms.outer;
            acc.attention += a.terms.attention;
        }
        let n = n_att as f64;
        AttentionTerms {
            inner: acc.inner / n,
            outer: acc.outer / n,
            attention: acc.attention / n,
        }
    });
    let breakdown = combine(ce, mean_terms, n_att, cfg);

    let gradients = with_grad.then(|| {
        let ce_scale = if n_att > 0 { 1.0 - cfg.alpha } else { 1.0 };
        let att_scale = if n_att > 0 { cfg.alpha / n_att as f64 } else { 0.0 };
        let d = c.feature_channels();
        let z = c.feature_size() * c.feature_size();
        let per_sample = par::map_indices(batch.len(), |i| {
            let mut g = Gradients::zeros_like(backbone);
            let dl: Vec<f64> = dlogits[i].iter().map(|v| v * ce_scale).collect();
            let mut extra = None;
            if let Some(a) = attended[i].as_ref().filter(|_| att_scale != 0.0) {
                let dmap: Vec<f64> = a.dmap.iter().map(|v| v * att_scale).collect();
                let (dsigma, dfeat) = a.tape.backward(&traces[i].features, &dmap);
                if !cfg.detach_sigma {
                    let mut dgrad = vec![0.0; d * z];
                    for (plane, ds) in dgrad.chunks_exact_mut(z).zip(&dsigma) {
                        plane.fill(ds / z as f64);
                    }
                    backbone.trace_score_gradient_vjp(&traces[i], labels[i], &dgrad, &mut g);
                }
                extra = Some(dfeat);
            }
            backbone.backward(&traces[i], &dl, extra.as_deref(), &mut g);
            g
        });
        let mut total = Gradients::zeros_like(backbone);
        for g in &per_sample {
            total.add_assign(g);
        }
        total
    });

    Ok(ObjectiveOutput {
        breakdown,
        logits,
        gradients,
    })
}

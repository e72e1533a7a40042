//! Classification metrics, reports and activation-map overlays.

mod metrics;
pub mod plot;
mod report;
mod viz;

use serde::{Deserialize, Serialize};

pub use metrics::{argmax, compute_recalls, one_vs_rest_auc, rank_auc, AucSummary, PredictionSet, RecallSummary};
pub use report::{load_report, render_report, PER_CLASS_CSV, RECALL_BAR_PNG, REPORT_JSON};
pub use viz::{jet, load_images, overlay, predicted_class_map, viz, OVERLAY_ALPHA};

use crate::annotations::{build_masks, AnnotationRecord};
use crate::backbone::Backbone;
use crate::cam::{cam_for_true_class, ActivationMap, CamOptions};
use crate::error::{CareError, Result};
use crate::losses::softmax;
use crate::pipeline::{match_annotations, predict_indices, Dataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub num_samples: usize,
    pub per_class_recall: Vec<f64>,
    pub mca: f64,
    /// `null` where a class has no positives or no negatives.
    pub auc_per_class: Vec<Option<f64>>,
    pub mean_auc: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub minority_class: usize,
    pub minority_recall: f64,
}

impl MetricsReport {
    /// Metrics of softmax scores; `minority_class` defaults to the class with
    /// the fewest samples.
    pub fn from_predictions(preds: &PredictionSet, class_names: &[String], minority_class: Option<usize>) -> Result<Self> {
        if class_names.len() != preds.num_classes() {
            return Err(CareError::Metric(format!(
                "{} class names for {} classes",
                class_names.len(),
                preds.num_classes()
            )));
        }
        let recalls = compute_recalls(preds)?;
        let auc = one_vs_rest_auc(preds)?;
        let confusion = preds.confusion();
        let minority_class = match minority_class {
            Some(c) if c < preds.num_classes() => c,
            Some(c) => return Err(CareError::Metric(format!("minority class {c} out of range"))),
            None => (0..confusion.len())
                .min_by_key(|&c| (confusion[c].iter().sum::<usize>(), c))
                .unwrap_or(0),
        };
        Ok(Self {
            class_names: class_names.to_vec(),
            num_samples: preds.len(),
            minority_recall: recalls.per_class_recall[minority_class],
            per_class_recall: recalls.per_class_recall,
            mca: recalls.mca,
            auc_per_class: auc.per_class,
            mean_auc: auc.mean,
            confusion,
            minority_class,
        })
    }
}

/// Softmax predictions of `backbone` over the whole dataset.
pub fn predictions(backbone: &Backbone, dataset: &Dataset) -> Result<PredictionSet> {
    check_compatible(backbone, dataset)?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let scores = predict_indices(backbone, dataset, &all)?.iter().map(|l| softmax(l)).collect();
    PredictionSet::new(scores, dataset.labels(), dataset.num_classes())
}

pub fn evaluate(backbone: &Backbone, dataset: &Dataset, minority_class: Option<usize>) -> Result<MetricsReport> {
    MetricsReport::from_predictions(&predictions(backbone, dataset)?, &dataset.class_names, minority_class)
}

fn check_compatible(backbone: &Backbone, dataset: &Dataset) -> Result<()> {
    let c = backbone.config();
    if c.num_classes != dataset.num_classes() || c.input_size != dataset.size || c.input_channels != dataset.channels {
        return Err(CareError::Checkpoint(format!(
            "backbone expects {} classes of {}x{}x{} images, data has {} classes of {}x{}x{}",
            c.num_classes,
            c.input_channels,
            c.input_size,
            c.input_size,
            dataset.num_classes(),
            dataset.channels,
            dataset.size,
            dataset.size
        )));
    }
    Ok(())
}

/// Share of activation inside the mask, `sum(m_in * F) / sum(F)`; `None`
/// for an all-zero map.
pub fn mass_inside(map: &ActivationMap, m_in: &[u8]) -> Option<f64> {
    let total: f64 = map.values.iter().sum();
    (total > 0.0).then(|| {
        let inside: f64 = map.values.iter().zip(m_in).filter(|(_, &m)| m == 1).map(|(v, _)| v).sum();
        inside / total
    })
}

/// Grad-CAM of each annotated image's ground-truth class, in annotation
/// order, paired with its mask.
pub fn true_class_maps(
    backbone: &Backbone,
    dataset: &Dataset,
    annotations: &[AnnotationRecord],
    opts: CamOptions,
) -> Result<Vec<(usize, ActivationMap, Vec<u8>)>> {
    check_compatible(backbone, dataset)?;
    let boxes = match_annotations(dataset, annotations)?;
    let mut keys: Vec<usize> = boxes.keys().copied().collect();
    keys.sort_unstable();
    let n = dataset.size;
    let mut out = Vec::with_capacity(keys.len());
    for chunk in keys.chunks(128) {
        let batch = dataset.batch(chunk)?;
        let output = backbone.forward(&batch)?;
        let maps = cam_for_true_class(&output, batch.labels(), (n, n), opts)?;
        for (&i, map) in chunk.iter().zip(maps) {
            let mask = build_masks(&boxes[&i], (n, n))?;
            out.push((i, map, mask.m_in.into_vec()));
        }
    }
    Ok(out)
}

/// CAM mass fraction inside the lesion boxes for every annotated image
/// whose map is not all zero.
pub fn localization_scores(backbone: &Backbone, dataset: &Dataset, annotations: &[AnnotationRecord]) -> Result<Vec<f64>> {
    Ok(true_class_maps(backbone, dataset, annotations, CamOptions::default())?
        .iter()
        .filter_map(|(_, map, m)| mass_inside(map, m))
        .collect())
}

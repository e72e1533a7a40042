use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::train::{finetune_care, TrainConfig};
use crate::annotations::AnnotationRecord;
use crate::backbone::Backbone;
use crate::cam::CamOptions;
use crate::error::{arg_err, CareError, Result};
use crate::eval::{evaluate, true_class_maps};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Alpha,
    Tau,
    LambdaOut,
    BoxScale,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            Self::Alpha => "alpha",
            Self::Tau => "tau",
            Self::LambdaOut => "lambda_out",
            Self::BoxScale => "box_scale",
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig, value: f64) {
        match self {
            Self::Alpha => cfg.loss.alpha = value,
            Self::Tau => cfg.loss.tau = value,
            Self::LambdaOut => cfg.loss.lambda_out = value,
            Self::BoxScale => cfg.box_scale = value,
        }
    }
}

impl FromStr for SweepParameter {
    type Err = CareError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(Self::Alpha),
            "tau" => Ok(Self::Tau),
            "lambda_out" | "lambda" => Ok(Self::LambdaOut),
            "box_scale" => Ok(Self::BoxScale),
            _ => arg_err(format!("unknown sweep parameter {s:?} (alpha, tau, lambda_out, box_scale)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: SweepParameter,
    pub value: f64,
    pub mca: f64,
    pub minority_recall: f64,
    pub mean_auc: f64,
    pub selected_epoch: usize,
    /// Mean share of pixels with activation above 0.5 on the annotated
    /// evaluation images, when any are given.
    pub cam_area: Option<f64>,
}

/// Data a sweep finetunes on and evaluates against.
pub struct SweepData<'a> {
    pub train: &'a Dataset,
    pub annotations: &'a [AnnotationRecord],
    pub test: &'a Dataset,
    pub test_annotations: &'a [AnnotationRecord],
}

/// Mean fraction of pixels with activation above 0.5.
pub fn mean_cam_area(backbone: &Backbone, dataset: &Dataset, annotations: &[AnnotationRecord]) -> Result<Option<f64>> {
    if annotations.is_empty() {
        return Ok(None);
    }
    let maps = true_class_maps(backbone, dataset, annotations, CamOptions::default())?;
    let areas: Vec<f64> = maps
        .iter()
        .map(|(_, m, _)| m.values.iter().filter(|&&v| v > 0.5).count() as f64 / m.values.len() as f64)
        .collect();
    Ok(Some(areas.iter().sum::<f64>() / areas.len() as f64))
}

/// One finetune from `init` per value, each evaluated on the test split.
/// `log` receives every run's metrics lines in value order.
pub fn sweep(
    cfg: &TrainConfig,
    data: &SweepData<'_>,
    init: &Backbone,
    parameter: SweepParameter,
    values: &[f64],
    log: &mut dyn Write,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return arg_err("sweep needs at least one value");
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut run = cfg.clone();
        parameter.apply(&mut run, value);
        log::info!("sweep {} = {value}", parameter.name());
        let out = finetune_care(&run, data.train, data.annotations, init, log)?;
        let report = evaluate(&out.backbone, data.test, None)?;
        rows.push(SweepRow {
            parameter,
            value,
            mca: report.mca,
            minority_recall: report.minority_recall,
            mean_auc: report.mean_auc,
            selected_epoch: out.selected_epoch,
            cam_area: mean_cam_area(&out.backbone, data.test, data.test_annotations)?,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["parameter", "value", "mca", "minority_recall", "mean_auc", "selected_epoch", "cam_area"])?;
    for r in rows {
        w.write_record([
            r.parameter.name().to_string(),
            r.value.to_string(),
            r.mca.to_string(),
            r.minority_recall.to_string(),
            r.mean_auc.to_string(),
            r.selected_epoch.to_string(),
            r.cam_area.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

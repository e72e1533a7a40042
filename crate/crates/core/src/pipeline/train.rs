use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment_sample, Augmentation};
use super::dataset::{stratified_split, Dataset};
use super::optim::{Optimizer, OptimizerConfig};
use crate::annotations::{build_masks, rescale_boxes, scale_box, AnnotationRecord, BoundingBox, MaskPair};
use crate::backbone::{load_checkpoint, save_checkpoint, Backbone, BackboneConfig, ImageBatch};
use crate::error::{config_err, CareError, Result};
use crate::eval::{compute_recalls, PredictionSet};
use crate::losses::{care_objective, inverse_frequency_weights, LossBreakdown, LossConfig};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    /// Epoch cap; zero returns the initial weights unchanged.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    pub augmentation: Augmentation,
    pub seed: u64,
    /// Pretrain stops after this many epochs without a lower training
    /// cross entropy; zero disables early stopping.
    pub early_stop_patience: usize,
    /// Stratified share of the training images held out for validation.
    pub val_fraction: f64,
    /// Replace `loss.class_weights` by inverse class frequencies of the
    /// training split.
    pub inverse_frequency_weights: bool,
    /// Scale factor applied to every lesion box before building masks.
    pub box_scale: f64,
    pub init_checkpoint: Option<PathBuf>,
    /// Architecture for pretraining; the reference CNN when absent.
    pub backbone: Option<BackboneConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Pretrain,
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-4,
            optimizer: OptimizerConfig::default(),
            loss: LossConfig::default(),
            augmentation: Augmentation::default(),
            seed: 0,
            early_stop_patience: 20,
            val_fraction: 0.1,
            inverse_frequency_weights: false,
            box_scale: 1.0,
            init_checkpoint: None,
            backbone: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return config_err("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return config_err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return config_err(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        if !(self.box_scale > 0.0) || !self.box_scale.is_finite() {
            return config_err(format!("box_scale must be positive, got {}", self.box_scale));
        }
        self.optimizer.validate()?;
        self.loss.validate(None)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One line of the JSON-lines metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        stage: Stage,
        epoch: usize,
        step: u64,
        #[serde(flatten)]
        loss: LossBreakdown,
    },
    Epoch {
        stage: Stage,
        epoch: usize,
        train_loss: f64,
        train_cross_entropy: f64,
        val_mca: Option<f64>,
    },
}

/// Called after every epoch with the epoch number and current weights.
pub type Observer<'a> = Option<&'a mut dyn FnMut(usize, &Backbone)>;

pub struct TrainOutcome {
    pub backbone: Backbone,
    pub epochs_run: usize,
    /// Epoch (1-based) whose weights were kept; 0 when no epoch ran.
    pub selected_epoch: usize,
    pub best_val_mca: Option<f64>,
    pub history: Vec<LogRecord>,
}

fn write_record(log: &mut dyn Write, rec: &LogRecord) -> Result<()> {
    serde_json::to_writer(&mut *log, rec)?;
    log.write_all(b"\n")?;
    Ok(())
}

fn check_classes(dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return config_err("training dataset is empty");
    }
    let present = dataset.class_counts().iter().filter(|&&n| n > 0).count();
    if present < 2 {
        return config_err(format!("training dataset has {present} populated class(es); need at least two"));
    }
    Ok(())
}

/// Logits of `indices` in chunks.
pub fn predict_indices(backbone: &Backbone, dataset: &Dataset, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(256) {
        out.extend(backbone.predict(&dataset.batch(chunk)?)?);
    }
    Ok(out)
}

fn validation_mca(backbone: &Backbone, dataset: &Dataset, val: &[usize]) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let truth: Vec<usize> = val.iter().map(|&i| dataset.samples[i].label).collect();
    let preds = PredictionSet::new(predict_indices(backbone, dataset, val)?, truth, dataset.num_classes())?;
    Ok(compute_recalls(&preds).ok().map(|r| r.mca))
}

struct Loop<'a> {
    cfg: &'a TrainConfig,
    loss: LossConfig,
    dataset: &'a Dataset,
    /// Lesion boxes in model coordinates, by sample index.
    boxes: HashMap<usize, Vec<BoundingBox>>,
    train: Vec<usize>,
    val: Vec<usize>,
}

impl Loop<'_> {
    fn batch(&self, indices: &[usize], epoch: usize) -> Result<(ImageBatch, Vec<Option<MaskPair>>)> {
        let ds = self.dataset;
        let n = ds.size;
        let prepared = par::map_indices(indices.len(), |k| -> Result<(Vec<f64>, Option<MaskPair>)> {
            let i = indices[k];
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
            rng.set_stream(((epoch as u64) << 32) | i as u64);
            let boxes = self.boxes.get(&i).map(Vec::as_slice).unwrap_or(&[]);
            let (pixels, boxes) = augment_sample(&ds.pixels_f64(i), ds.channels, n, boxes, &self.cfg.augmentation, &mut rng);
            let mask = if boxes.is_empty() {
                None
            } else {
                let scaled = boxes
                    .iter()
                    .map(|b| scale_box(b, self.cfg.box_scale, (n, n)))
                    .collect::<Result<Vec<_>>>()?;
                Some(build_masks(&scaled, (n, n))?)
            };
            Ok((pixels, mask))
        });
        let mut pixels = Vec::with_capacity(indices.len() * ds.channels * n * n);
        let mut masks = Vec::with_capacity(indices.len());
        for p in prepared {
            let (px, m) = p?;
            pixels.extend(px);
            masks.push(m);
        }
        let labels = indices.iter().map(|&i| ds.samples[i].label).collect();
        Ok((ImageBatch::new(pixels, ds.channels, n, n, labels, ds.num_classes())?, masks))
    }

    fn run(&self, mut backbone: Backbone, stage: Stage, log: &mut dyn Write, mut observer: Observer<'_>) -> Result<TrainOutcome> {
        let cfg = self.cfg;
        let mut opt = Optimizer::new(cfg.optimizer.clone(), cfg.learning_rate, backbone.params());
        let mut order = self.train.clone();
        let mut history = Vec::new();
        let mut best_ce = f64::INFINITY;
        let mut since_best = 0;
        let mut best: Option<(f64, usize, Backbone)> = None;
        let mut epochs_run = 0;
        for epoch in 1..=cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(u64::MAX - epoch as u64);
            order.shuffle(&mut rng);
            let (mut sum_total, mut sum_ce) = (0.0, 0.0);
            for chunk in order.chunks(cfg.batch_size) {
                let (batch, masks) = self.batch(chunk, epoch)?;
                let out = care_objective(&backbone, &batch, &masks, &self.loss, true)?;
                let grads = out.gradients.expect("gradients requested");
                if !grads.is_finite() {
                    return Err(CareError::Config(format!("non-finite gradient at epoch {epoch}; lower the learning rate")));
                }
                opt.step(backbone.params_mut(), &grads);
                let rec = LogRecord::Step {
                    stage,
                    epoch,
                    step: opt.steps(),
                    loss: out.breakdown.clone(),
                };
                write_record(log, &rec)?;
                history.push(rec);
                sum_total += out.breakdown.total * chunk.len() as f64;
                sum_ce += out.breakdown.cross_entropy * chunk.len() as f64;
            }
            epochs_run = epoch;
            let n = order.len().max(1) as f64;
            let train_ce = sum_ce / n;
            let val_mca = if stage == Stage::Finetune {
                validation_mca(&backbone, self.dataset, &self.val)?
            } else {
                None
            };
            let rec = LogRecord::Epoch {
                stage,
                epoch,
                train_loss: sum_total / n,
                train_cross_entropy: train_ce,
                val_mca,
            };
            write_record(log, &rec)?;
            history.push(rec);
            info!("{stage:?} epoch {epoch}: train CE {train_ce:.4}, val MCA {val_mca:?}");
            if let Some(f) = observer.as_mut() {
                f(epoch, &backbone);
            }
            match stage {
                Stage::Pretrain => {
                    if train_ce < best_ce {
                        best_ce = train_ce;
                        since_best = 0;
                    } else {
                        since_best += 1;
                        if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                            info!("early stop after epoch {epoch}");
                            break;
                        }
                    }
                }
                Stage::Finetune => {
                    if let Some(m) = val_mca {
                        if best.as_ref().map_or(true, |(b, _, _)| m >= *b) {
                            best = Some((m, epoch, backbone.clone()));
                        }
                    }
                }
            }
        }
        log.flush()?;
        Ok(match best {
            Some((m, e, b)) => TrainOutcome {
                backbone: b,
                epochs_run,
                selected_epoch: e,
                best_val_mca: Some(m),
                history,
            },
            None => TrainOutcome {
                backbone,
                epochs_run,
                selected_epoch: epochs_run,
                best_val_mca: None,
                history,
            },
        })
    }
}

fn loss_for(cfg: &TrainConfig, dataset: &Dataset, train: &[usize], attention: bool) -> Result<LossConfig> {
    let mut loss = cfg.loss.clone();
    if !attention {
        loss.alpha = 0.0;
    }
    if cfg.inverse_frequency_weights {
        let mut counts = vec![0; dataset.num_classes()];
        for &i in train {
            counts[dataset.samples[i].label] += 1;
        }
        loss.class_weights = Some(inverse_frequency_weights(&counts)?);
    }
    loss.validate(Some(dataset.num_classes()))?;
    Ok(loss)
}

/// Stage one: classification loss only, from a seeded initialization.
/// The validation share of the data is held out here as well so the same
/// images stay unseen through finetuning.
pub fn pretrain(cfg: &TrainConfig, dataset: &Dataset, log: &mut dyn Write) -> Result<TrainOutcome> {
    pretrain_observed(cfg, dataset, log, None)
}

pub fn pretrain_observed(cfg: &TrainConfig, dataset: &Dataset, log: &mut dyn Write, observer: Observer<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_classes(dataset)?;
    let bcfg = cfg
        .backbone
        .clone()
        .unwrap_or_else(|| BackboneConfig::reference(dataset.channels, dataset.size, dataset.num_classes()));
    if bcfg.num_classes != dataset.num_classes() || bcfg.input_size != dataset.size || bcfg.input_channels != dataset.channels {
        return config_err("backbone configuration does not match the dataset");
    }
    let backbone = Backbone::new(bcfg, cfg.seed)?;
    let (train, val) = stratified_split(&dataset.labels(), cfg.val_fraction, cfg.seed);
    let lp = Loop {
        cfg,
        loss: loss_for(cfg, dataset, &train, false)?,
        dataset,
        boxes: HashMap::new(),
        train,
        val,
    };
    lp.run(backbone, Stage::Pretrain, log, observer)
}

/// Lesion boxes keyed by sample index, rescaled to the model input size.
/// Fails on ids missing from the dataset, listing the first ten.
pub fn match_annotations(dataset: &Dataset, annotations: &[AnnotationRecord]) -> Result<HashMap<usize, Vec<BoundingBox>>> {
    let by_id = dataset.index_by_id();
    let missing: Vec<&str> = annotations
        .iter()
        .map(|a| a.image_id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(CareError::Config(format!(
            "{} annotated image id(s) not found in the dataset, first {}: {}",
            missing.len(),
            missing.len().min(10),
            missing[..missing.len().min(10)].join(", ")
        )));
    }
    let mut out = HashMap::new();
    for a in annotations {
        let i = by_id[a.image_id.as_str()];
        let s = &dataset.samples[i];
        if a.class_label != s.label {
            warn!("{}: annotation class {} differs from image label {}", a.image_id, a.class_label, s.label);
        }
        let rec = rescale_boxes(a, s.source_shape, (dataset.size, dataset.size))?;
        out.entry(i).or_insert_with(Vec::new).extend(rec.boxes);
    }
    Ok(out)
}

/// Stage two: the combined objective from `init`, keeping the epoch with the
/// best validation MCA. Annotated validation images do not contribute.
pub fn finetune_care(
    cfg: &TrainConfig,
    dataset: &Dataset,
    annotations: &[AnnotationRecord],
    init: &Backbone,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    finetune_care_observed(cfg, dataset, annotations, init, log, None)
}

pub fn finetune_care_observed(
    cfg: &TrainConfig,
    dataset: &Dataset,
    annotations: &[AnnotationRecord],
    init: &Backbone,
    log: &mut dyn Write,
    observer: Observer<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_classes(dataset)?;
    let bc = init.config();
    if bc.num_classes != dataset.num_classes() || bc.input_size != dataset.size || bc.input_channels != dataset.channels {
        return Err(CareError::Checkpoint("initial checkpoint does not match the dataset".into()));
    }
    let mut boxes = match_annotations(dataset, annotations)?;
    let (train, val) = stratified_split(&dataset.labels(), cfg.val_fraction, cfg.seed);
    for i in &val {
        boxes.remove(i);
    }
    let lp = Loop {
        cfg,
        loss: loss_for(cfg, dataset, &train, true)?,
        dataset,
        boxes,
        train,
        val,
    };
    lp.run(init.clone(), Stage::Finetune, log, observer)
}

/// Finetunes from `cfg.init_checkpoint` and writes the result to `out`,
/// which must differ from the initial checkpoint.
pub fn finetune_from_checkpoint(
    cfg: &TrainConfig,
    dataset: &Dataset,
    annotations: &[AnnotationRecord],
    out: &Path,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    let Some(init_path) = cfg.init_checkpoint.as_deref() else {
        return config_err("finetuning needs init_checkpoint");
    };
    if same_file(init_path, out) {
        return config_err(format!("refusing to overwrite the initial checkpoint {}", init_path.display()));
    }
    let (init, names) = load_checkpoint(init_path)?;
    if names != dataset.class_names {
        return Err(CareError::Checkpoint(format!(
            "checkpoint classes {names:?} differ from dataset classes {:?}",
            dataset.class_names
        )));
    }
    let outcome = finetune_care(cfg, dataset, annotations, &init, log)?;
    save_checkpoint(out, &outcome.backbone, &dataset.class_names)?;
    Ok(outcome)
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

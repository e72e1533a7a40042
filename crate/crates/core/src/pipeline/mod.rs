//! Two-stage training (classification pretrain, attention finetune),
//! augmentation, hyperparameter sweeps and the synthetic dataset generator.

pub mod augment;
mod dataset;
mod optim;
mod sweep;
mod synthetic;
mod train;

pub use augment::{augment, AugmentOp, Augmentation, Transform};
pub(crate) use dataset::to_planar;
pub use dataset::{stratified_split, Dataset, Sample};
pub use optim::{Optimizer, OptimizerConfig};
pub use sweep::{mean_cam_area, sweep, write_sweep_csv, SweepData, SweepParameter, SweepRow};
pub use synthetic::{generate_synthetic, patch_profile, SyntheticClass, SyntheticData, SyntheticSpec};
pub use train::{
    finetune_care, finetune_care_observed, finetune_from_checkpoint, match_annotations, predict_indices, pretrain, pretrain_observed,
    LogRecord, Observer, Stage, TrainConfig, TrainOutcome,
};

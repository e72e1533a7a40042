//! Class attention to lesion regions (CARE) for imbalanced image
//! classification.
//!
//! The crate trains small convolutional classifiers whose Grad-CAM maps are
//! pushed inside annotated lesion boxes for the classes that carry boxes:
//!
//! * [`backbone`]: the classifier contract plus a tiny reference CNN with
//!   hand-written forward/backward passes.
//! * [`cam`]: Grad-CAM channel weights, activation maps, normalization.
//! * [`annotations`]: bounding boxes, inside/outside masks, CSV ingestion.
//! * [`losses`]: cross entropy, cost-sensitive and focal losses, the
//!   inner/outer attention loss and the combined objective with gradients.
//! * [`bbox`]: probability map to bounding box post-processing.
//! * [`pipeline`]: two-stage training, augmentation, sweeps, synthetic data.
//! * [`eval`]: metrics, reports and heatmap visualization.

pub mod annotations;
pub mod backbone;
pub mod bbox;
pub mod cam;
pub mod error;
pub mod eval;
pub mod grid;
pub mod losses;
mod par;
pub mod pipeline;

pub use error::{CareError, Result};
pub use grid::Grid;

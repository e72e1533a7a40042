//! Checkpoint container.
//!
//! A checkpoint is a single JSON document:
//!
//! ```json
//! {
//!   "format": "care-checkpoint",
//!   "version": 1,
//!   "config": { "input_channels": 1, "input_size": 64, "num_classes": 3,
//!               "widths": [16, 32, 64], "head": { "kind": "gap_linear" } },
//!   "class_names": ["a", "b", "c"],
//!   "params": [ { "name": "conv1.weight", "shape": [16, 1, 3, 3], "data": [...] }, ... ]
//! }
//! ```
//!
//! Parameter arrays are row-major and keyed by layer name; floats are written
//! in shortest round-trip form so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backbone, BackboneConfig, Param};
use crate::error::{CareError, Result};

pub const FORMAT: &str = "care-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: BackboneConfig,
    #[serde(default)]
    pub class_names: Vec<String>,
    pub params: Vec<Param>,
}

impl Checkpoint {
    pub fn from_backbone(backbone: &Backbone, class_names: &[String]) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            config: backbone.config().clone(),
            class_names: class_names.to_vec(),
            params: backbone.params().to_vec(),
        }
    }

    pub fn into_backbone(self) -> Result<Backbone> {
        if self.format != FORMAT {
            return Err(CareError::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.version != VERSION {
            return Err(CareError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        Backbone::from_params(self.config, self.params)
    }
}

pub fn save_checkpoint(path: &Path, backbone: &Backbone, class_names: &[String]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let ckpt = Checkpoint::from_backbone(backbone, class_names);
    fs::write(path, serde_json::to_vec(&ckpt)?)?;
    Ok(())
}

/// Loads a checkpoint, returning the backbone and its class names.
pub fn load_checkpoint(path: &Path) -> Result<(Backbone, Vec<String>)> {
    let bytes = fs::read(path)?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)
        .map_err(|e| CareError::Checkpoint(format!("{}: {e}", path.display())))?;
    let names = ckpt.class_names.clone();
    Ok((ckpt.into_backbone()?, names))
}

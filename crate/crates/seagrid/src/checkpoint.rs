//! Versioned JSON checkpoints: model parameters, optimizer state, class
//! manifest and grid geometry in one self-describing container.

use crate::dataset::GridSpec;
use crate::error::{Error, Result};
use crate::model::{HeadParams, MlpBackbone, Model};
use crate::optim::AdamState;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub class_names: Vec<String>,
    pub grid: GridSpec,
    pub backbone: MlpBackbone,
    /// Absent for encoder-only (pretraining) checkpoints.
    pub head: Option<HeadParams>,
    /// Optimizer state at the end of the producing run, for resumption.
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn encoder_only(class_names: Vec<String>, grid: GridSpec, backbone: MlpBackbone) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            class_names,
            grid,
            backbone,
            head: None,
            adam: None,
        }
    }

    pub fn trained(
        class_names: Vec<String>,
        grid: GridSpec,
        model: Model,
        adam: Option<AdamState>,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            class_names,
            grid,
            backbone: model.backbone,
            head: Some(model.head),
            adam,
        }
    }

    /// Full model; errors for encoder-only checkpoints.
    pub fn model(&self) -> Result<Model> {
        let head = self
            .head
            .clone()
            .ok_or_else(|| Error::data("checkpoint has no classification head (encoder only)"))?;
        Ok(Model {
            backbone: self.backbone.clone(),
            head,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|e| Error::data(format!("cannot write checkpoint {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::data(format!(
                "checkpoint {} has version {}, expected {CHECKPOINT_VERSION}",
                path.display(),
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

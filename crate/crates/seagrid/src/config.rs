//! Flat `key = value` pipeline configuration.
//!
//! Unknown keys fail fast with the offending line number. `#` comments and
//! blank lines are allowed. Every key has a default, so an empty file is a
//! valid configuration.

use crate::augment::AugConfig;
use crate::dataset::GridSpec;
use crate::ensemble::{EnsembleConfig, NormMode};
use crate::error::{Error, Result};
use crate::losses::ClassWeights;
use crate::model::{BackboneConfig, ModelConfig};
use crate::pretext::PretextConfig;
use crate::seaclip::SeaclipConfig;
use crate::seafeats::SeafeatsConfig;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub grid: GridSpec,
    /// Explicit per-class weights; when unset, four-class data gets the
    /// published seagrass weighting and anything else uniform weights.
    pub class_weights: Option<Vec<f64>>,
    pub lr: f64,
    pub epochs: usize,
    pub feature_dim: usize,
    pub seed: u64,
    pub ensemble_mode: NormMode,
    pub batch_images: usize,
    pub batch_patches: usize,
    pub dropout: f64,
    pub temperature: f64,
    pub head_hidden: usize,
    pub backbone_input: usize,
    pub backbone_hidden: Vec<usize>,
    pub template_cap: Option<usize>,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub crop_fraction: Option<f64>,
    /// Training-time augmentation toggle (always on for fine-tuning).
    pub augment: bool,
    /// Optional pre-tiling resize of inference imagery to HxW. Off by
    /// default: scale matching is normally done through the grid choice.
    pub resize: Option<(usize, usize)>,
    /// Similarity scaling used when reporting zero-shot probabilities.
    pub prob_scale: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            grid: GridSpec { rows: 5, cols: 8 },
            class_weights: None,
            lr: 1e-5,
            epochs: 150,
            feature_dim: 64,
            seed: 0,
            ensemble_mode: NormMode::L2,
            batch_images: 3,
            batch_patches: 32,
            dropout: 0.15,
            temperature: 0.07,
            head_hidden: 512,
            backbone_input: 16,
            backbone_hidden: vec![256, 128],
            template_cap: None,
            pretrain_epochs: 20,
            pretrain_batch: 8,
            pretrain_lr: 1e-4,
            crop_fraction: Some(0.75),
            augment: false,
            resize: None,
            prob_scale: 100.0,
        }
    }
}

fn parse_usize_list(value: &str) -> Option<Vec<usize>> {
    value
        .split(',')
        .map(|v| v.trim().parse::<usize>().ok())
        .collect()
}

fn parse_f64_list(value: &str) -> Option<Vec<f64>> {
    value
        .split(',')
        .map(|v| v.trim().parse::<f64>().ok())
        .collect()
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, lineno, format!("expected key = value, got '{line}'")))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::parse(path, lineno, format!("bad {what} '{value}'"));
            match key {
                "grid" => cfg.grid = value.parse().map_err(|_| bad("grid"))?,
                "class_weights" => {
                    cfg.class_weights = Some(parse_f64_list(value).ok_or_else(|| bad("weight list"))?)
                }
                "lr" => cfg.lr = value.parse().map_err(|_| bad("learning rate"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("epoch count"))?,
                "feature_dim" => cfg.feature_dim = value.parse().map_err(|_| bad("feature dim"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                "ensemble_mode" => cfg.ensemble_mode = value.parse()?,
                "batch_images" => cfg.batch_images = value.parse().map_err(|_| bad("batch size"))?,
                "batch_patches" => cfg.batch_patches = value.parse().map_err(|_| bad("batch size"))?,
                "dropout" => cfg.dropout = value.parse().map_err(|_| bad("dropout"))?,
                "temperature" => cfg.temperature = value.parse().map_err(|_| bad("temperature"))?,
                "head_hidden" => cfg.head_hidden = value.parse().map_err(|_| bad("hidden width"))?,
                "backbone_input" => {
                    cfg.backbone_input = value.parse().map_err(|_| bad("input side"))?
                }
                "backbone_hidden" => {
                    cfg.backbone_hidden =
                        parse_usize_list(value).ok_or_else(|| bad("hidden width list"))?
                }
                "template_cap" => {
                    cfg.template_cap = match value {
                        "none" => None,
                        v => Some(v.parse().map_err(|_| bad("template cap"))?),
                    }
                }
                "pretrain_epochs" => {
                    cfg.pretrain_epochs = value.parse().map_err(|_| bad("epoch count"))?
                }
                "pretrain_batch" => {
                    cfg.pretrain_batch = value.parse().map_err(|_| bad("batch size"))?
                }
                "pretrain_lr" => cfg.pretrain_lr = value.parse().map_err(|_| bad("learning rate"))?,
                "crop_fraction" => {
                    cfg.crop_fraction = match value {
                        "none" => None,
                        v => Some(v.parse().map_err(|_| bad("crop fraction"))?),
                    }
                }
                "augment" => {
                    cfg.augment = match value {
                        "on" | "true" => true,
                        "off" | "false" => false,
                        _ => return Err(bad("augment flag (on|off)")),
                    }
                }
                "resize" => {
                    cfg.resize = match value {
                        "none" => None,
                        v => {
                            let g: GridSpec = v.parse().map_err(|_| bad("resize (HxW or none)"))?;
                            Some((g.rows, g.cols))
                        }
                    }
                }
                "prob_scale" => cfg.prob_scale = value.parse().map_err(|_| bad("scale"))?,
                unknown => {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("unknown key '{unknown}'"),
                    ))
                }
            }
        }
        Ok(cfg)
    }

    /// Explicit weights when given, else the published four-class weights
    /// or uniform ones for other class counts.
    pub fn resolve_weights(&self, num_classes: usize) -> Result<ClassWeights> {
        let weights = match &self.class_weights {
            Some(w) => ClassWeights(w.clone()),
            None if num_classes == 4 => ClassWeights::seagrass_default(),
            None => ClassWeights::uniform(num_classes),
        };
        weights.validate(num_classes)?;
        Ok(weights)
    }

    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                input_side: self.backbone_input,
                hidden: self.backbone_hidden.clone(),
                feature_dim: self.feature_dim,
            },
            head_hidden: self.head_hidden,
            dropout_p: self.dropout,
            num_classes,
        }
    }

    pub fn seafeats_config(&self, num_classes: usize) -> Result<SeafeatsConfig> {
        Ok(SeafeatsConfig {
            epochs: self.epochs,
            batch_images: self.batch_images,
            lr: self.lr,
            weights: self.resolve_weights(num_classes)?,
            template_cap: self.template_cap,
            aug: self.augment.then(AugConfig::default),
        })
    }

    pub fn seaclip_config(&self, num_classes: usize) -> Result<SeaclipConfig> {
        Ok(SeaclipConfig {
            epochs: self.epochs,
            batch_patches: self.batch_patches,
            lr: self.lr,
            weights: self.resolve_weights(num_classes)?,
        })
    }

    pub fn pretext_config(&self) -> PretextConfig {
        PretextConfig {
            epochs: self.pretrain_epochs,
            batch: self.pretrain_batch,
            tau: self.temperature,
            lr: self.pretrain_lr,
            aug: AugConfig::default(),
            crop_fraction: self.crop_fraction,
        }
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            weights: vec![0.5, 0.5],
            norm: self.ensemble_mode,
        }
    }
}

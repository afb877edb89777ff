//! Inference-time classifier fusion: average the normalized output logits
//! of both members, then apply softmax. Normalizing first puts the members
//! on one scale so they weigh equally; averaging before the softmax keeps
//! the logit magnitudes.

use crate::dataset::{tile_image, GridSpec, LabeledImage};
use crate::error::{Error, Result};
use crate::losses::softmax;
use crate::mask::ClassMask;
use crate::model::Model;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Divide by the Euclidean norm (unit length). The default.
    L2,
    /// Divide by the largest absolute component.
    MaxAbs,
}

impl FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(NormMode::L2),
            "maxabs" | "max-abs" => Ok(NormMode::MaxAbs),
            other => Err(Error::data(format!("unknown normalization mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    /// Member weights; positive, summing to one.
    pub weights: Vec<f64>,
    pub norm: NormMode,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            weights: vec![0.5, 0.5],
            norm: NormMode::L2,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self, members: usize) -> Result<()> {
        if self.weights.len() != members {
            return Err(Error::data(format!(
                "{} ensemble weights for {members} members",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::data("ensemble weights must be positive"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::data(format!("ensemble weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Scale a logit vector to unit size under the configured norm. An
/// all-zero vector cannot be normalized and is an error.
pub fn normalize_logits(logits: &[f64], mode: NormMode) -> Result<Vec<f64>> {
    let scale = match mode {
        NormMode::L2 => logits.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormMode::MaxAbs => logits.iter().fold(0.0f64, |m, &x| m.max(x.abs())),
    };
    if scale <= 0.0 || !scale.is_finite() {
        return Err(Error::numeric("cannot normalize zero logits"));
    }
    Ok(logits.iter().map(|x| x / scale).collect())
}

/// `softmax(sum_i w_i * normalize(logits_i))` over two members.
pub fn ensemble_predict(
    logits_a: &[f64],
    logits_b: &[f64],
    cfg: &EnsembleConfig,
) -> Result<Vec<f64>> {
    if logits_a.len() != logits_b.len() {
        return Err(Error::data(format!(
            "ensemble members disagree on class count: {} vs {}",
            logits_a.len(),
            logits_b.len()
        )));
    }
    cfg.validate(2)?;
    let na = normalize_logits(logits_a, cfg.norm)?;
    let nb = normalize_logits(logits_b, cfg.norm)?;
    let fused: Vec<f64> = na
        .iter()
        .zip(&nb)
        .map(|(a, b)| cfg.weights[0] * a + cfg.weights[1] * b)
        .collect();
    Ok(softmax(&fused))
}

/// Tile an image, run eval-mode inference per patch through one or two
/// members, and reassemble the coarse mask. With a single member the cell
/// probabilities are the plain softmax of its logits.
pub fn predict_mask(
    image: &LabeledImage,
    grid: GridSpec,
    model_a: &Model,
    model_b: Option<&Model>,
    cfg: &EnsembleConfig,
) -> Result<ClassMask> {
    if let Some(b) = model_b {
        if b.num_classes() != model_a.num_classes() {
            return Err(Error::data(format!(
                "ensemble members disagree on class count: {} vs {}",
                model_a.num_classes(),
                b.num_classes()
            )));
        }
    }
    let patches = tile_image(image, grid)?;
    let mut probs = Vec::with_capacity(patches.len());
    for patch in &patches {
        let logits_a = model_a.logits_eval(patch)?;
        let cell = match model_b {
            Some(b) => ensemble_predict(&logits_a, &b.logits_eval(patch)?, cfg)?,
            None => softmax(&logits_a),
        };
        probs.push(cell);
    }
    crate::dataset::reassemble_mask(&probs, grid)
}

//! Coarse segmentation masks: per-cell labels and class probabilities,
//! serialized as JSON plus an optional color PNG heatmap.

use crate::dataset::argmax_lowest;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One class label and probability vector per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMask {
    pub labels: Vec<Vec<usize>>,
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl ClassMask {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn cols(&self) -> usize {
        self.labels.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() || self.labels[0].is_empty() {
            return Err(Error::data("mask has no cells"));
        }
        let cols = self.cols();
        if self.labels.iter().any(|r| r.len() != cols) {
            return Err(Error::data("mask label rows differ in length"));
        }
        if !self.probs.is_empty() {
            if self.probs.len() != self.rows() || self.probs.iter().any(|r| r.len() != cols) {
                return Err(Error::data("mask probability shape mismatch"));
            }
            for (r, row) in self.probs.iter().enumerate() {
                for (c, cell) in row.iter().enumerate() {
                    let sum: f64 = cell.iter().sum();
                    if (sum - 1.0).abs() > 1e-6 {
                        return Err(Error::data(format!(
                            "mask cell ({r},{c}) probabilities sum to {sum}"
                        )));
                    }
                    if self.labels[r][c] != argmax_lowest(cell) {
                        return Err(Error::data(format!(
                            "mask cell ({r},{c}) label is not the argmax of its probabilities"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// On-disk mask record. `probs` may be omitted for hand-written ground
/// truth files; written predictions always include it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskFile {
    pub source_id: String,
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl MaskFile {
    pub fn new(source_id: impl Into<String>, mask: &ClassMask) -> Self {
        MaskFile {
            source_id: source_id.into(),
            rows: mask.rows(),
            cols: mask.cols(),
            labels: mask.labels.clone(),
            probs: mask.probs.clone(),
        }
    }

    pub fn into_mask(self) -> Result<ClassMask> {
        let mask = ClassMask {
            labels: self.labels,
            probs: self.probs,
        };
        if mask.rows() != self.rows || mask.cols() != self.cols {
            return Err(Error::data(format!(
                "mask {} declares {}x{} but holds {}x{}",
                self.source_id,
                self.rows,
                self.cols,
                mask.rows(),
                mask.cols()
            )));
        }
        mask.validate()?;
        Ok(mask)
    }
}

pub fn save_mask_json(path: &Path, file: &MaskFile) -> Result<()> {
    let out = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(out), file)
        .map_err(|e| Error::data(format!("cannot write mask {}: {e}", path.display())))
}

pub fn load_mask_json(path: &Path) -> Result<MaskFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

/// Fixed heatmap palette: Background pink, then green, orange, yellow for
/// the seagrass morphotypes, blue for a fifth (outlier) class. Further
/// classes cycle.
pub const PALETTE: [[u8; 3]; 5] = [
    [255, 105, 180], // 0 background: pink
    [0, 176, 80],    // 1 green
    [255, 140, 0],   // 2 orange
    [255, 225, 25],  // 3 yellow
    [0, 116, 217],   // 4 blue
];

pub fn class_color(class: usize) -> [u8; 3] {
    PALETTE[class % PALETTE.len()]
}

/// Cell edge length in pixels for the rendered heatmap.
const HEATMAP_CELL: u32 = 32;

/// Render the mask labels as an 8-bit color PNG, one solid block per cell.
pub fn save_mask_png(path: &Path, mask: &ClassMask) -> Result<()> {
    let (rows, cols) = (mask.rows() as u32, mask.cols() as u32);
    let mut img = image::RgbImage::new(cols * HEATMAP_CELL, rows * HEATMAP_CELL);
    for (y, x, px) in img.enumerate_pixels_mut().map(|(x, y, p)| (y, x, p)) {
        let (r, c) = ((y / HEATMAP_CELL) as usize, (x / HEATMAP_CELL) as usize);
        px.0 = class_color(mask.labels[r][c]);
    }
    img.save(path)
        .map_err(|e| Error::data(format!("cannot write heatmap {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_mask() -> ClassMask {
        ClassMask {
            labels: vec![vec![0, 1], vec![1, 0]],
            probs: vec![
                vec![vec![0.7, 0.3], vec![0.2, 0.8]],
                vec![vec![0.4, 0.6], vec![0.5, 0.5]],
            ],
        }
    }

    #[test]
    fn mask_json_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mask = small_mask();
        save_mask_json(&path, &MaskFile::new("img0", &mask)).unwrap();
        let back = load_mask_json(&path).unwrap();
        assert_eq!(back.source_id, "img0");
        assert_eq!(back.into_mask().unwrap(), mask);
    }

    #[test]
    fn mask_validation_catches_label_argmax_mismatch() {
        let mut mask = small_mask();
        mask.labels[0][0] = 1;
        assert!(mask.validate().is_err());
    }

    #[test]
    fn truth_masks_may_omit_probs() {
        let file = MaskFile {
            source_id: "t".into(),
            rows: 1,
            cols: 2,
            labels: vec![vec![0, 3]],
            probs: vec![],
        };
        let mask = file.into_mask().unwrap();
        assert_eq!(mask.labels[0][1], 3);
    }

    #[test]
    fn heatmap_png_uses_palette() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.png");
        save_mask_png(&path, &small_mask()).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.width(), 2 * HEATMAP_CELL);
        assert_eq!(img.get_pixel(0, 0).0, PALETTE[0]);
        assert_eq!(img.get_pixel(HEATMAP_CELL, 0).0, PALETTE[1]);
    }
}
